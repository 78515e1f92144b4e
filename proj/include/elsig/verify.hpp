#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "elsig/model.hpp"
#include "elsig/recovery.hpp"
#include "elsig/types.hpp"

namespace elsig {

/// Exact-key state: the final-layer parameters plus the cached
/// pseudoinverse of the centered unembedding (SVD, relative cutoff 1e-10).
struct ExactKey {
  FinalLayerParams params;
  Matrix pinv;    // d x v
  double radius;  // sphere radius of the norm kind
};

/// Either the true final layer or recovered parameters, plus the distance
/// tolerance used for the pass/fail decision.
struct EllipseKey {
  std::string id;
  std::variant<ExactKey, RecoveredParams> source;
  double tau = 1e-4;

  Index vocab() const;
};

struct VerificationReport {
  double distance = 0.0;
  bool passed = false;
  std::string candidate_id;
  std::optional<double> margin_log10;  // log10(second best / best) when attributing
  bool ambiguous = false;              // margin under half a decade
  bool replayed = false;               // set by the MAC-layer verifier
};

/// Builds a key from true parameters. With no explicit tau: 1e-4 for
/// eps = 0, otherwise ten times the mean interior offset of the smoothed
/// norm (estimated from seeded draws).
EllipseKey make_exact_key(const FinalLayerParams& params, std::string id,
                          std::optional<double> tau = std::nullopt);

EllipseKey make_recovered_key(RecoveredParams rec, std::string id,
                              double tau = 1e-4);

/// | ||z|| - 1 | where z is the inverse affine transform of the logprob:
/// the pseudoinverse route for exact keys, the recovered-parameter route
/// otherwise. Genuine outputs land on the unit sphere.
double distance_to_ellipse(const VectorRef& logprob, const EllipseKey& key);

/// Argmin-distance attribution across candidates; a single logprob
/// suffices. Ties within half a decade are flagged ambiguous.
VerificationReport attribute(const VectorRef& logprob,
                             const std::vector<EllipseKey>& candidates);

struct ProjectionDiagnostic {
  Index column = 0;
  double grad_norm = 0.0;
  int iterations = 0;
};

struct CrossProjection {
  LogprobMatrix projected;
  std::vector<ProjectionDiagnostic> non_converged;
};

/// Re-expresses logprobs from one model in another model's centered column
/// space, minimizing the cross-entropy over the shared tokens (damped
/// Newton, least-squares logit initialization). The result carries the
/// target's linear signature but not its ellipse signature.
CrossProjection cross_space_project(const LogprobMatrix& source,
                                    const EllipseKey& target,
                                    const std::vector<Index>& shared_tokens);

}  // namespace elsig
