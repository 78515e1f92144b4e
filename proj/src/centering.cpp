#include "elsig/centering.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace elsig {

Vector center(const VectorRef& v) {
  if (!v.allFinite()) throw PreconditionError("center: non-finite entries");
  return v.array() - v.mean();
}

Matrix center_columns(const MatrixRef& m) {
  Matrix c = m;
  c.array().rowwise() -= m.colwise().mean().array();
  return c;
}

RankEstimate estimate_rank(const LogprobMatrix& m, double rel_tol) {
  if (m.count < 1) throw PreconditionError("estimate_rank: empty matrix");
  Matrix centered = center_columns(m.data);

  Eigen::BDCSVD<Matrix> svd(centered);
  RankEstimate est;
  est.singular_values = svd.singularValues();
  const double top = est.singular_values(0);
  if (top <= 0.0) {
    est.gap = std::numeric_limits<double>::infinity();
    return est;  // all-equal columns: rank 0 after centering
  }
  const double cut = rel_tol * top;
  Index r = 0;
  while (r < est.singular_values.size() && est.singular_values(r) > cut) ++r;
  est.rank = r;

  const double kept = r > 0 ? est.singular_values(r - 1) : top;
  const double dropped =
      r < est.singular_values.size() ? est.singular_values(r) : 0.0;
  est.gap = dropped > 0.0 ? kept / dropped
                          : std::numeric_limits<double>::infinity();
  est.ambiguous = est.gap < 10.0;

  // Rank of column-mean-subtracted data: points on an affine subspace lose
  // their offset direction here.
  Matrix affine = centered;
  affine.colwise() -= centered.rowwise().mean().eval();
  Eigen::BDCSVD<Matrix> svd2(affine);
  const auto& sv2 = svd2.singularValues();
  if (sv2.size() > 0 && sv2(0) > 0.0) {
    const double cut2 = rel_tol * sv2(0);
    Index r2 = 0;
    while (r2 < sv2.size() && sv2(r2) > cut2) ++r2;
    est.affine_rank = r2;
  }
  return est;
}

namespace {

double condition_of(const Matrix& block) {
  Eigen::JacobiSVD<Matrix> svd(block);
  const auto& sv = svd.singularValues();
  const double lo = sv(sv.size() - 1);
  if (lo <= 0.0) return std::numeric_limits<double>::infinity();
  return sv(0) / lo;
}

constexpr double kCondLimit = 1e8;

}  // namespace

ProjectionPair build_projections(const LogprobMatrix& m, Index dim) {
  if (dim < 1 || dim > m.vocab)
    throw PreconditionError("build_projections: need 1 <= d <= v");
  if (m.count < dim)
    throw PreconditionError("build_projections: need at least d columns");

  Matrix centered = center_columns(m.data);

  ProjectionPair pair;
  pair.vocab = m.vocab;
  pair.dim = dim;
  pair.rows.resize(static_cast<std::size_t>(dim));
  std::iota(pair.rows.begin(), pair.rows.end(), Index{0});
  pair.anchor_cols.resize(static_cast<std::size_t>(dim));
  std::iota(pair.anchor_cols.begin(), pair.anchor_cols.end(), Index{0});

  auto gather = [&](const std::vector<Index>& rows,
                    const std::vector<Index>& cols) {
    Matrix block(static_cast<Index>(rows.size()),
                 static_cast<Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j)
      for (std::size_t i = 0; i < rows.size(); ++i)
        block(static_cast<Index>(i), static_cast<Index>(j)) =
            centered(rows[i], cols[j]);
    return block;
  };

  Matrix anchor = gather(pair.rows, pair.anchor_cols);
  double cond = condition_of(anchor);

  if (!(cond < kCondLimit) && dim == m.vocab) {
    // Full-dimension degenerate case: centered data spans at most v-1
    // dimensions, so the selection inverse becomes a projector onto the
    // observation span.
    Matrix anchors_full(m.vocab, dim);
    for (Index j = 0; j < dim; ++j)
      anchors_full.col(j) =
          centered.col(pair.anchor_cols[static_cast<std::size_t>(j)]);
    pair.up = anchors_full *
              anchors_full.completeOrthogonalDecomposition().pseudoInverse();
    double worst = 0.0;
    for (Index j = 0; j < m.count; ++j) {
      Vector c = centered.col(j);
      const double denom = std::max(c.norm(), 1e-300);
      worst = std::max(worst, (pair.up * c - c).norm() / denom);
    }
    pair.max_rel_residual = worst;
    if (worst > 1e-6)
      throw NumericError(
          "build_projections: observations inconsistent at full dimension");
    return pair;
  }

  if (!(cond < kCondLimit)) {
    // Generic position failed; pick anchor columns by pivoted QR on the
    // centered data, then rows by pivoted QR on the transposed anchors.
    Eigen::ColPivHouseholderQR<Matrix> col_qr(centered);
    const auto& col_perm = col_qr.colsPermutation().indices();
    for (Index j = 0; j < dim; ++j)
      pair.anchor_cols[static_cast<std::size_t>(j)] = col_perm(j);
    std::sort(pair.anchor_cols.begin(), pair.anchor_cols.end());

    Matrix anchors_full(m.vocab, dim);
    for (Index j = 0; j < dim; ++j)
      anchors_full.col(j) = centered.col(pair.anchor_cols[static_cast<std::size_t>(j)]);

    Eigen::ColPivHouseholderQR<Matrix> row_qr(anchors_full.transpose());
    const auto& row_perm = row_qr.colsPermutation().indices();
    for (Index i = 0; i < dim; ++i)
      pair.rows[static_cast<std::size_t>(i)] = row_perm(i);
    std::sort(pair.rows.begin(), pair.rows.end());

    anchor = gather(pair.rows, pair.anchor_cols);
    cond = condition_of(anchor);
    if (!(cond < kCondLimit))
      throw NumericError(
          "build_projections: anchor block singular after pivoting, "
          "condition number " + std::to_string(cond));
  }

  Matrix anchors_full(m.vocab, dim);
  for (Index j = 0; j < dim; ++j)
    anchors_full.col(j) = centered.col(pair.anchor_cols[static_cast<std::size_t>(j)]);
  pair.up = anchor.transpose()
                .partialPivLu()
                .solve(anchors_full.transpose())
                .transpose();

  // Round-trip residual over every input column.
  double worst = 0.0;
  for (Index j = 0; j < m.count; ++j) {
    Vector c = centered.col(j);
    Vector y(dim);
    for (Index i = 0; i < dim; ++i) y(i) = c(pair.rows[static_cast<std::size_t>(i)]);
    const double denom = std::max(c.norm(), 1e-300);
    worst = std::max(worst, (pair.up * y - c).norm() / denom);
  }
  pair.max_rel_residual = worst;
  if (worst > 1e-6)
    throw NumericError(
        "build_projections: observations do not lie in a " +
        std::to_string(dim) + "-dimensional space (round-trip residual " +
        std::to_string(worst) + ")");
  return pair;
}

Vector down_project(const ProjectionPair& pair, const VectorRef& logprob) {
  if (logprob.size() != pair.vocab)
    throw PreconditionError("down_project: dimension mismatch");
  Vector c = center(logprob);
  Vector y(pair.dim);
  for (Index i = 0; i < pair.dim; ++i)
    y(i) = c(pair.rows[static_cast<std::size_t>(i)]);
  return y;
}

Vector up_project(const ProjectionPair& pair, const VectorRef& y) {
  if (y.size() != pair.dim)
    throw PreconditionError("up_project: dimension mismatch");
  return pair.up * y;
}

Matrix down_project_all(const ProjectionPair& pair, const MatrixRef& data) {
  if (data.rows() != pair.vocab)
    throw PreconditionError("down_project_all: dimension mismatch");
  Matrix points(data.cols(), pair.dim);
  for (Index j = 0; j < data.cols(); ++j)
    points.row(j) = down_project(pair, data.col(j)).transpose();
  return points;
}

}  // namespace elsig
