#include "elsig/verify.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

#include "elsig/centering.hpp"
#include "elsig/rng.hpp"

namespace elsig {

namespace {

Matrix centered_columns_of(const Matrix& w) {
  Matrix cw = w;
  cw.array().rowwise() -= w.colwise().mean().array();
  return cw;
}

Matrix pinv_svd(const Matrix& m, double rel_cutoff) {
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double cut = rel_cutoff * sv(0);
  Vector inv = Vector::Zero(sv.size());
  for (Index i = 0; i < sv.size(); ++i)
    if (sv(i) > cut) inv(i) = 1.0 / sv(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

}  // namespace

Index EllipseKey::vocab() const {
  if (const auto* e = std::get_if<ExactKey>(&source)) return e->params.vocab;
  return std::get<RecoveredParams>(source).pair.vocab;
}

EllipseKey make_exact_key(const FinalLayerParams& params, std::string id,
                          std::optional<double> tau) {
  EllipseKey key;
  key.id = std::move(id);
  ExactKey exact;
  exact.params = params;
  exact.pinv = pinv_svd(centered_columns_of(params.unembed), 1e-10);
  exact.radius = norm_sphere_radius(params.norm, params.dim);
  if (tau) {
    key.tau = *tau;
  } else if (params.eps == 0.0) {
    key.tau = 1e-4;
  } else {
    // eps pushes genuine outputs strictly inside the sphere; track the mean
    // interior offset.
    Rng rng(splitmix64(params.seed ^ 0x7a0bdULL));
    double mean = 0.0;
    const int trials = 256;
    for (int i = 0; i < trials; ++i)
      mean += normalize(rng.gaussian_vector(params.dim), params.norm,
                        params.eps)
                  .norm() /
              exact.radius;
    mean /= trials;
    key.tau = 10.0 * (1.0 - mean);
  }
  key.source = std::move(exact);
  return key;
}

EllipseKey make_recovered_key(RecoveredParams rec, std::string id, double tau) {
  EllipseKey key;
  key.id = std::move(id);
  key.tau = tau;
  key.source = std::move(rec);
  return key;
}

double distance_to_ellipse(const VectorRef& logprob, const EllipseKey& key) {
  if (logprob.size() != key.vocab())
    throw PreconditionError("distance_to_ellipse: vocabulary size mismatch");

  if (const auto* exact = std::get_if<ExactKey>(&key.source)) {
    Vector pre = exact->pinv * center(logprob);
    Vector z = (pre - exact->params.bias).cwiseQuotient(exact->params.scale);
    return std::abs(z.norm() / exact->radius - 1.0);
  }
  const auto& rec = std::get<RecoveredParams>(key.source);
  return std::abs(ellipse_coordinate(rec, logprob).norm() - 1.0);
}

VerificationReport attribute(const VectorRef& logprob,
                             const std::vector<EllipseKey>& candidates) {
  if (candidates.size() < 2)
    throw PreconditionError("attribute: need at least two candidates");

  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  double second_d = best_d;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double d = distance_to_ellipse(logprob, candidates[i]);
    if (d < best_d) {
      second_d = best_d;
      best_d = d;
      best = i;
    } else if (d < second_d) {
      second_d = d;
    }
  }

  VerificationReport report;
  report.candidate_id = candidates[best].id;
  report.distance = best_d;
  report.passed = best_d <= candidates[best].tau;
  report.margin_log10 =
      std::log10(second_d / std::max(best_d, 1e-300));
  report.ambiguous = *report.margin_log10 < 0.5;
  return report;
}

CrossProjection cross_space_project(const LogprobMatrix& source,
                                    const EllipseKey& target,
                                    const std::vector<Index>& shared_tokens) {
  const Matrix* basis_ptr = nullptr;
  Matrix exact_basis;
  if (const auto* exact = std::get_if<ExactKey>(&target.source)) {
    exact_basis = centered_columns_of(exact->params.unembed);
    basis_ptr = &exact_basis;
  } else {
    basis_ptr = &std::get<RecoveredParams>(target.source).pair.up;
  }
  const Matrix& basis = *basis_ptr;  // v_B x d_B
  const Index dim_b = basis.cols();
  const Index vocab_b = basis.rows();

  if (shared_tokens.empty())
    throw PreconditionError("cross_space_project: no shared tokens");
  if (static_cast<Index>(shared_tokens.size()) < dim_b)
    throw PreconditionError(
        "cross_space_project: fewer shared tokens than the target dimension "
        "(underdetermined)");
  std::set<Index> dedup(shared_tokens.begin(), shared_tokens.end());
  if (dedup.size() != shared_tokens.size())
    throw PreconditionError("cross_space_project: duplicate shared token");
  for (Index t : shared_tokens)
    if (t < 0 || t >= source.vocab || t >= vocab_b)
      throw PreconditionError("cross_space_project: shared token out of range");

  const auto s = static_cast<Index>(shared_tokens.size());
  Matrix g(s, dim_b);
  for (Index i = 0; i < s; ++i) g.row(i) = basis.row(shared_tokens[i]);
  Eigen::ColPivHouseholderQR<Matrix> init_qr(g);

  CrossProjection out;
  out.projected.vocab = vocab_b;
  out.projected.count = source.count;
  out.projected.data.resize(vocab_b, source.count);
  out.projected.token_ids.resize(static_cast<std::size_t>(vocab_b));
  for (Index t = 0; t < vocab_b; ++t)
    out.projected.token_ids[static_cast<std::size_t>(t)] = t;

  const int max_iter = 200;
  const double grad_tol = 1e-10;

  for (Index col = 0; col < source.count; ++col) {
    Vector restricted(s);
    for (Index i = 0; i < s; ++i)
      restricted(i) = source.data(shared_tokens[i], col);
    Vector want = softmax(restricted);  // renormalized over the shared set

    // Least-squares logit match as the starting point.
    Vector coords = init_qr.solve(center(restricted));

    double damping = 1e-10;
    int it = 0;
    double gnorm = 0.0;
    for (; it < max_iter; ++it) {
      Vector logits = g * coords;
      Vector have = softmax(logits);
      Vector grad = g.transpose() * (have - want);
      gnorm = grad.norm();
      if (gnorm <= grad_tol) break;

      Matrix weighted = g.cwiseProduct(have.replicate(1, dim_b));
      Matrix hess = g.transpose() * weighted -
                    (g.transpose() * have) * (have.transpose() * g);
      hess.diagonal().array() += damping * (1.0 + hess.trace());

      Vector step = hess.ldlt().solve(-grad);
      const double f0 = -want.dot(logits) + logsumexp(logits);
      Vector cand = coords + step;
      Vector cand_logits = g * cand;
      const double f1 = -want.dot(cand_logits) + logsumexp(cand_logits);
      if (f1 <= f0) {
        coords = cand;
        damping = std::max(damping * 0.3, 1e-12);
      } else {
        damping *= 10.0;
        if (damping > 1e12) break;
      }
    }
    if (gnorm > grad_tol)
      out.non_converged.push_back({col, gnorm, it});

    out.projected.data.col(col) = log_softmax(basis * coords);
  }
  return out;
}

}  // namespace elsig
