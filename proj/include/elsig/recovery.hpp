#pragma once

#include <optional>
#include <string>

#include "elsig/centering.hpp"
#include "elsig/ellipsoid.hpp"
#include "elsig/model.hpp"
#include "elsig/types.hpp"

namespace elsig {

/// Extra pieces recovered for layer-norm models, whose ellipse lives in one
/// fewer dimension and is lifted off the origin by the bias.
struct LayerNormLift {
  Matrix up;    // d x (d-1): inverts the axis drop on the ellipse plane
  Vector base;  // first down-projected output; anchors the plane shift
};

struct RecoveryInfo {
  RankEstimate rank;
  Index n_samples = 0;
  double fit_objective = 0.0;
  double fit_rms_residual = 0.0;
  int fit_iterations = 0;
  bool fit_constraint_active = false;
  std::string fit_method;
  double fit_seconds = 0.0;
};

/// Everything extracted from a batch of logprob outputs: projections,
/// ellipse in affine form, and the layer-norm lift when applicable. The
/// affine center always has length d; rotation/axes have length
/// ellipse_dim (d, or d-1 for layer norm).
struct RecoveredParams {
  ProjectionPair pair;
  AffineForm affine;
  std::optional<LayerNormLift> lift;
  NormKind norm = NormKind::ScaledRms;
  Index ellipse_dim = 0;
  RecoveryInfo info;
};

struct RecoveryScore {
  double bias_mse = 0.0;
  double stretch_mse = 0.0;
  double rotation_trace = 0.0;     // trace(U' U*), at most ellipse_dim
  double rotation_geodesic = 0.0;  // Frobenius norm of log(U' U*)
  Index n_samples = 0;
  bool degenerate_pairing = false; // near-equal singular values; column
                                   // pairing ill-defined
};

struct RecoverOptions {
  double rank_rel_tol = 1e-6;
  double delta = -1.0;  // <= 0 selects the scale-aware default margin
};

/// Full extraction for RMS-family models: center, estimate rank, build
/// projections, down-project, fit the ellipsoid, convert to affine form.
RecoveredParams recover_rms(const LogprobMatrix& m,
                            const RecoverOptions& opt = {});

/// Extraction for layer-norm models: shifts by the first output, drops one
/// axis, fits in d-1 dimensions, solves the lift, and reassembles the bias.
RecoveredParams recover_layernorm(const LogprobMatrix& m,
                                  const RecoverOptions& opt = {});

/// Orthogonal matrix mapping the all-ones vector to (sqrt(d), 0, ..., 0).
Matrix householder_isometry(Index dim);

/// Ground-truth affine parameters implied by the final layer, expressed in
/// the coordinates of the given down-projection (and, for layer norm, the
/// standard axis drop). Used to score recoveries.
AffineForm truth_affine(const FinalLayerParams& truth,
                        const ProjectionPair& pair);

/// Distances between recovered and true bias, stretch, and rotation.
RecoveryScore score_recovery(const RecoveredParams& rec,
                             const FinalLayerParams& truth);

/// Checks that the final layer and its affine reparameterization induce the
/// same output distribution; returns the max total-variation deviation over
/// random hidden states. Requires eps = 0.
double reparam_equivalence_check(const FinalLayerParams& truth, int trials,
                                 std::uint64_t seed = 0);

/// Rank-gap heuristic: layer-norm outputs lose a dimension after
/// mean-centering across samples. Advisory only; recovery never switches
/// algorithms on its own.
NormKind detect_norm_kind(const LogprobMatrix& m, double rel_tol = 1e-6);

/// Coordinate of a logprob on the recovered unit sphere; unit norm for
/// genuine outputs.
Vector ellipse_coordinate(const RecoveredParams& rec, const VectorRef& logprob);

/// Projects a logprob onto the recovered ellipse and re-emits it through
/// the recovered parameters; reproduces genuine outputs when the recovery
/// is exact.
Vector logprob_from_recovered(const RecoveredParams& rec,
                              const VectorRef& logprob);

}  // namespace elsig
