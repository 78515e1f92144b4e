#pragma once

#include <Eigen/Dense>

#include "elsig/centering.hpp"
#include "elsig/model.hpp"
#include "elsig/rng.hpp"
#include "elsig/types.hpp"

namespace elsig::test {

/// Independent pseudoinverse route (complete orthogonal decomposition, not
/// the SVD path the library uses).
inline Matrix oracle_pinv(const Matrix& m) {
  return m.completeOrthogonalDecomposition().pseudoInverse();
}

/// Columns of a matrix centered over the vocabulary axis.
inline Matrix oracle_centered(const Matrix& w) {
  Matrix c = w;
  c.array().rowwise() -= w.colwise().mean().array();
  return c;
}

/// Brute-force inverse affine transform: ||(pinv(CW) C l - beta) / gamma||
/// over the norm's sphere radius. Genuine outputs give 1.
inline double oracle_sphere_radius(const FinalLayerParams& p, const Vector& logprob) {
  Vector centered = logprob.array() - logprob.mean();
  Vector pre = oracle_pinv(oracle_centered(p.unembed)) * centered;
  Vector z = (pre - p.bias).cwiseQuotient(p.scale);
  return z.norm() / norm_sphere_radius(p.norm, p.dim);
}

/// Numerical rank by singular values.
inline Index oracle_rank(const Matrix& m, double rel_tol = 1e-8) {
  Eigen::BDCSVD<Matrix> svd(m);
  const auto& sv = svd.singularValues();
  Index r = 0;
  while (r < sv.size() && sv(r) > rel_tol * sv(0)) ++r;
  return r;
}

/// Total variation distance between two probability vectors.
inline double tv_distance(const Vector& p, const Vector& q) {
  return 0.5 * (p - q).lpNorm<1>();
}

}  // namespace elsig::test
