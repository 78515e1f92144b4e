#include "elsig/recovery.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>

#include <cmath>
#include <complex>
#include <string>
#include <utility>

#include "elsig/cost.hpp"
#include "elsig/rng.hpp"

namespace elsig {

namespace {

template <typename Fn>
auto run_stage(const char* stage, Fn&& fn) {
  try {
    return fn();
  } catch (const PreconditionError& e) {
    throw PreconditionError(std::string("[") + stage + "] " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(std::string("[") + stage + "] " + e.what());
  }
}

// Columns of the unembedding centered over the vocabulary, gathered at the
// pair's coordinate rows: the d x d matrix the truth parameters live in.
Matrix centered_unembed_rows(const FinalLayerParams& p,
                             const ProjectionPair& pair) {
  Matrix cw = p.unembed;
  cw.array().rowwise() -= p.unembed.colwise().mean().array();
  Matrix acw(pair.dim, p.dim);
  for (Index i = 0; i < pair.dim; ++i)
    acw.row(i) = cw.row(pair.rows[static_cast<std::size_t>(i)]);
  return acw;
}

void fill_fit_info(RecoveryInfo& info, const EllipsoidFitResult& fit) {
  info.fit_objective = fit.objective;
  info.fit_rms_residual = fit.quadric.rms_residual;
  info.fit_iterations = fit.iterations;
  info.fit_constraint_active = fit.constraint_active;
  info.fit_method = fit.method;
  info.fit_seconds = fit.seconds;
}

// Equation residual above this marks points that do not lie on any
// ellipsoid of the attempted dimension (e.g. an RMS model fed to the
// layer-norm path, whose projected cloud is solid).
constexpr double kNormMismatchResidual = 1e-2;

}  // namespace

RecoveredParams recover_rms(const LogprobMatrix& m, const RecoverOptions& opt) {
  RecoveredParams rec;
  rec.norm = NormKind::ScaledRms;

  rec.info.rank = run_stage("rank", [&] { return estimate_rank(m, opt.rank_rel_tol); });
  if (rec.info.rank.ambiguous)
    throw NumericError(
        "[rank] singular spectrum has no 10x gap at the cutoff; supply more "
        "samples or adjust rel_tol");
  const Index d = rec.info.rank.rank;
  if (d < 2) throw NumericError("[rank] estimated dimension below 2");

  const auto needed = required_samples(d, SampleConvention::kText);
  if (m.count < needed)
    throw PreconditionError(
        "[samples] need at least " + std::to_string(needed) +
        " outputs for d=" + std::to_string(d) + ", got " +
        std::to_string(m.count));
  rec.info.n_samples = m.count;

  rec.pair = run_stage("projections", [&] { return build_projections(m, d); });
  Matrix points = down_project_all(rec.pair, m.data);

  EllipsoidFitResult fit = run_stage("fit", [&] {
    return opt.delta > 0.0 ? fit_ellipsoid_specific(points, opt.delta)
                           : fit_ellipsoid_specific(points);
  });
  fill_fit_info(rec.info, fit);
  if (fit.quadric.rms_residual > kNormMismatchResidual)
    throw PreconditionError(
        "[fit] outputs do not lie on a " + std::to_string(d) +
        "-dimensional ellipsoid (residual " +
        std::to_string(fit.quadric.rms_residual) +
        "); wrong norm kind for this recovery?");

  rec.affine = run_stage("convert", [&] {
    return center_to_affine(quadric_to_center(fit.quadric));
  });
  rec.ellipse_dim = d;
  return rec;
}

RecoveredParams recover_layernorm(const LogprobMatrix& m,
                                  const RecoverOptions& opt) {
  RecoveredParams rec;
  rec.norm = NormKind::LayerNorm;

  rec.info.rank = run_stage("rank", [&] { return estimate_rank(m, opt.rank_rel_tol); });
  if (rec.info.rank.ambiguous)
    throw NumericError(
        "[rank] singular spectrum has no 10x gap at the cutoff; supply more "
        "samples or adjust rel_tol");
  const Index d = rec.info.rank.rank;
  if (d < 3) throw NumericError("[rank] estimated dimension below 3");

  const auto needed = required_samples(d - 1, SampleConvention::kText) + 1;
  if (m.count < needed)
    throw PreconditionError(
        "[samples] need at least " + std::to_string(needed) +
        " outputs for d=" + std::to_string(d) + " (layer norm), got " +
        std::to_string(m.count));
  rec.info.n_samples = m.count;

  rec.pair = run_stage("projections", [&] { return build_projections(m, d); });
  Matrix y = down_project_all(rec.pair, m.data);  // n x d, rows are points
  Vector base = y.row(0).transpose();

  // Lift: invert the axis drop on the plane through the shifted outputs.
  Matrix shifted_anchor(d, d - 1);
  for (Index j = 0; j < d - 1; ++j)
    shifted_anchor.col(j) = y.row(j + 1).transpose() - base;
  Eigen::FullPivLU<Matrix> lu(shifted_anchor.topRows(d - 1));
  if (!lu.isInvertible())
    throw NumericError(
        "[lift] dropped-axis anchor block is singular; reorder the outputs");
  Matrix lift_up = shifted_anchor * lu.inverse();

  Matrix points = (y.rowwise() - base.transpose()).leftCols(d - 1);

  EllipsoidFitResult fit = run_stage("fit", [&] {
    return opt.delta > 0.0 ? fit_ellipsoid_specific(points, opt.delta)
                           : fit_ellipsoid_specific(points);
  });
  fill_fit_info(rec.info, fit);
  if (fit.quadric.rms_residual > kNormMismatchResidual)
    throw PreconditionError(
        "[fit] shifted outputs do not lie on a " + std::to_string(d - 1) +
        "-dimensional ellipsoid (residual " +
        std::to_string(fit.quadric.rms_residual) +
        "); wrong norm kind for this recovery?");

  rec.affine = run_stage("convert", [&] {
    return center_to_affine(quadric_to_center(fit.quadric));
  });
  Vector plane_center = rec.affine.center;          // in the d-1 coordinates
  rec.affine.center = base + lift_up * plane_center; // lifted bias, length d
  rec.lift = LayerNormLift{std::move(lift_up), std::move(base)};
  rec.ellipse_dim = d - 1;
  return rec;
}

Matrix householder_isometry(Index dim) {
  if (dim < 2) throw PreconditionError("householder_isometry: d must be >= 2");
  const double root = std::sqrt(static_cast<double>(dim));
  Vector u = Vector::Ones(dim);
  u(0) -= root;
  Matrix h = Matrix::Identity(dim, dim) - (2.0 / u.squaredNorm()) * u * u.transpose();
  return h;
}

AffineForm truth_affine(const FinalLayerParams& truth,
                        const ProjectionPair& pair) {
  if (pair.dim != truth.dim)
    throw PreconditionError("truth_affine: projection dimension mismatch");
  const Index d = truth.dim;
  Matrix acw = centered_unembed_rows(truth, pair);
  Matrix stretched = acw * truth.scale.asDiagonal();
  const double radius = norm_sphere_radius(truth.norm, d);

  AffineForm a;
  a.center = acw * truth.bias;

  if (truth.norm == NormKind::LayerNorm) {
    // Hidden states are centered: rotate the ones direction onto an axis,
    // drop it, and drop the matching output coordinate.
    Matrix iso = householder_isometry(d);
    Matrix tangent = iso.bottomRows(d - 1).transpose();  // d x (d-1)
    Matrix reduced = (stretched * tangent).topRows(d - 1);
    Eigen::JacobiSVD<Matrix> svd(radius * reduced, Eigen::ComputeFullU);
    a.rotation = svd.matrixU();
    a.axes = svd.singularValues();
  } else {
    Eigen::JacobiSVD<Matrix> svd(radius * stretched, Eigen::ComputeFullU);
    a.rotation = svd.matrixU();
    a.axes = svd.singularValues();
  }
  apply_sign_convention(a.rotation);
  return a;
}

RecoveryScore score_recovery(const RecoveredParams& rec,
                             const FinalLayerParams& truth) {
  AffineForm ta = truth_affine(truth, rec.pair);
  if (ta.axes.size() != rec.ellipse_dim ||
      ta.center.size() != rec.affine.center.size())
    throw PreconditionError("score_recovery: dimension mismatch");

  RecoveryScore s;
  s.n_samples = rec.info.n_samples;
  s.bias_mse = (rec.affine.center - ta.center).squaredNorm() /
               static_cast<double>(ta.center.size());
  s.stretch_mse = (rec.affine.axes - ta.axes).squaredNorm() /
                  static_cast<double>(ta.axes.size());

  Matrix r = rec.affine.rotation.transpose() * ta.rotation;
  s.rotation_trace = r.trace();
  Eigen::ComplexEigenSolver<Matrix> eig(r);
  double sq = 0.0;
  for (Index i = 0; i < r.rows(); ++i) {
    const double angle = std::arg(eig.eigenvalues()(i));
    sq += angle * angle;
  }
  s.rotation_geodesic = std::sqrt(sq);

  for (Index i = 0; i + 1 < ta.axes.size(); ++i)
    if (ta.axes(i) - ta.axes(i + 1) < 1e-6 * ta.axes(0))
      s.degenerate_pairing = true;
  return s;
}

double reparam_equivalence_check(const FinalLayerParams& truth, int trials,
                                 std::uint64_t seed) {
  if (truth.eps != 0.0)
    throw PreconditionError("reparam_equivalence_check: requires eps = 0");
  const Index d = truth.dim;

  Matrix cw = truth.unembed;
  cw.array().rowwise() -= truth.unembed.colwise().mean().array();
  Matrix acw = cw.topRows(d);
  Eigen::PartialPivLU<Matrix> lu(acw);
  Matrix up = cw * lu.inverse();

  Eigen::JacobiSVD<Matrix> svd(acw * truth.scale.asDiagonal(),
                               Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix rot_left = svd.matrixU();
  Matrix rot_right = svd.matrixV();
  Vector axes = svd.singularValues();
  Vector offset = acw * truth.bias;

  Rng rng(splitmix64(seed ^ 0xe11195eULL));
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    Vector xhat = normalize(rng.gaussian_vector(d), truth.norm, 0.0);
    Vector p1 = softmax(truth.unembed *
                        (truth.scale.cwiseProduct(xhat) + truth.bias));
    Vector p2 = softmax(
        up * (rot_left * axes.asDiagonal() * rot_right.transpose() * xhat +
              offset));
    worst = std::max(worst, 0.5 * (p1 - p2).lpNorm<1>());
  }
  return worst;
}

NormKind detect_norm_kind(const LogprobMatrix& m, double rel_tol) {
  RankEstimate est = estimate_rank(m, rel_tol);
  return est.affine_rank == est.rank - 1 ? NormKind::LayerNorm
                                         : NormKind::ScaledRms;
}

Vector ellipse_coordinate(const RecoveredParams& rec, const VectorRef& logprob) {
  Vector y = down_project(rec.pair, logprob);
  Vector local = y - rec.affine.center;
  if (rec.lift) local = local.head(rec.ellipse_dim).eval();
  return (rec.affine.rotation.transpose() * local).array() /
         rec.affine.axes.array();
}

Vector logprob_from_recovered(const RecoveredParams& rec,
                              const VectorRef& logprob) {
  Vector z = ellipse_coordinate(rec, logprob);
  const double r = z.norm();
  if (!(r > 0.0))
    throw NumericError("logprob_from_recovered: output at ellipse center");
  z /= r;
  Vector on_sphere =
      rec.affine.rotation * rec.affine.axes.cwiseProduct(z);
  Vector y = rec.lift ? Vector(rec.affine.center + rec.lift->up * on_sphere)
                      : Vector(rec.affine.center + on_sphere);
  return log_softmax(up_project(rec.pair, y));
}

}  // namespace elsig
