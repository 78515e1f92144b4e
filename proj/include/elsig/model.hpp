#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "elsig/types.hpp"

namespace elsig {

/// Final normalization layer variant. The scaled RMS form maps inputs onto
/// the unit sphere (when eps = 0); plain RMS onto the sphere of radius
/// sqrt(d); layer norm centers first, then normalizes to radius sqrt(d).
enum class NormKind { ScaledRms, Rms, LayerNorm };

std::string norm_name(NormKind k);
NormKind norm_from_name(const std::string& name);

/// Radius of the sphere that normalized hidden states live on when eps = 0.
double norm_sphere_radius(NormKind k, Index dim);

/// Ground-truth final layer of a synthetic language model: unembedding,
/// element-wise affine, and normalization settings.
struct FinalLayerParams {
  Index vocab = 0;       // v
  Index dim = 0;         // d
  Matrix unembed;        // v x d
  Vector scale;          // length d, strictly nonzero
  Vector bias;           // length d
  NormKind norm = NormKind::ScaledRms;
  double eps = 0.0;
  std::uint64_t seed = 0;
  int resample_retries = 0;  // degenerate draws discarded before this one
};

/// v x n matrix of logprob column vectors plus token metadata. Every column
/// satisfies logsumexp = 0 up to rounding.
struct LogprobMatrix {
  Index vocab = 0;
  Index count = 0;  // n
  Matrix data;      // vocab x count
  std::vector<std::int64_t> token_ids;
};

struct NormHistogram {
  Index bins = 0;
  std::vector<std::int64_t> counts;  // over [0, 1], equal-width bins
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

/// Draws a random full-rank final layer. Deterministic for a fixed seed;
/// rank-deficient draws are discarded and retried with seed+1, recorded in
/// resample_retries.
FinalLayerParams synth_model(Index vocab, Index dim, NormKind norm, double eps,
                             std::uint64_t seed);

/// Applies the chosen normalization to a nonzero pre-activation vector.
Vector normalize(const VectorRef& x, NormKind norm, double eps);

/// Full final-layer pass: normalize, element-wise affine, unembed,
/// log-softmax. The result always logsumexps to 0.
Vector forward(const FinalLayerParams& params, const VectorRef& x);

/// n logprob columns from i.i.d. standard normal hidden states.
LogprobMatrix sample_outputs(const FinalLayerParams& params, Index n,
                             std::uint64_t seed);

/// Distribution of normalized-state magnitudes, expressed as a fraction of
/// the eps = 0 sphere radius so all mass lies in [0, 1].
NormHistogram hidden_norm_histogram(const FinalLayerParams& params, Index n,
                                    Index bins, std::uint64_t seed);

double logsumexp(const VectorRef& v);
Vector log_softmax(const VectorRef& logits);
Vector softmax(const VectorRef& logits);

}  // namespace elsig
