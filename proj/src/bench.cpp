#include "elsig/bench.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

#include "elsig/cost.hpp"
#include "elsig/ellipsoid.hpp"
#include "elsig/rng.hpp"

namespace elsig {

namespace {

// Random well-conditioned ellipsoid surface cloud: rows are
// center + R * (axes .* u) for unit Gaussian directions u.
Matrix surface_cloud(Index dim, Index n, Rng& rng) {
  Eigen::HouseholderQR<Matrix> qr(rng.gaussian_matrix(dim, dim));
  Matrix rot = qr.householderQ();
  Vector axes = (0.25 * rng.gaussian_vector(dim)).array().exp();
  Vector cen = 0.5 * rng.gaussian_vector(dim);

  Matrix pts(n, dim);
  for (Index i = 0; i < n; ++i) {
    Vector u = rng.gaussian_vector(dim);
    u /= u.norm();
    pts.row(i) = (cen + rot * axes.cwiseProduct(u)).transpose();
  }
  return pts;
}

}  // namespace

BenchResult bench_fit(const std::vector<Index>& dims, double sample_factor,
                      int repeats, const std::vector<Index>& extrapolate_dims,
                      std::uint64_t seed) {
  if (dims.empty()) throw PreconditionError("bench_fit: no dimensions");
  if (!std::is_sorted(dims.begin(), dims.end()))
    throw PreconditionError("bench_fit: dimensions must be ascending");
  if (dims.back() > 512)
    throw PreconditionError("bench_fit: dimensions above 512 are out of desk-scale reach");
  if (repeats < 1) throw PreconditionError("bench_fit: repeats must be >= 1");
  if (sample_factor < 1.0)
    throw PreconditionError("bench_fit: sample_factor must be >= 1");

  Rng rng(splitmix64(seed ^ 0xbe9cULL));
  BenchResult result;
  for (Index d : dims) {
    BenchPoint point;
    point.dim = d;
    const auto n = static_cast<Index>(
        std::ceil(sample_factor *
                  static_cast<double>(required_samples(d, SampleConvention::kText))));
    for (int r = 0; r < repeats; ++r) {
      Matrix pts = surface_cloud(d, n, rng);
      EllipsoidFitResult fit = fit_ellipsoid_specific(pts);
      point.seconds.push_back(fit.seconds);
    }
    std::vector<double> sorted = point.seconds;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    point.median = sorted.size() % 2 == 1
                       ? sorted[mid]
                       : 0.5 * (sorted[mid - 1] + sorted[mid]);
    result.points.push_back(std::move(point));
  }

  // Degree-6 polynomial over the medians in the scaled variable d/d_max;
  // minimum-norm least squares when there are fewer than seven dimensions.
  result.basis_scale = static_cast<double>(dims.back());
  const auto npts = static_cast<Index>(result.points.size());
  Matrix vander(npts, 7);
  Vector rhs(npts);
  for (Index i = 0; i < npts; ++i) {
    const double s =
        static_cast<double>(result.points[static_cast<std::size_t>(i)].dim) /
        result.basis_scale;
    double p = 1.0;
    for (Index k = 0; k < 7; ++k) {
      vander(i, k) = p;
      p *= s;
    }
    rhs(i) = result.points[static_cast<std::size_t>(i)].median;
  }
  Eigen::BDCSVD<Matrix> svd(vander, Eigen::ComputeThinU | Eigen::ComputeThinV);
  result.poly_coeffs = svd.solve(rhs);

  for (Index d : extrapolate_dims)
    result.extrapolations.push_back({d, bench_poly_eval(result, d)});
  return result;
}

double bench_poly_eval(const BenchResult& r, Index dim) {
  const double s = static_cast<double>(dim) / r.basis_scale;
  double value = 0.0;
  double p = 1.0;
  for (Index k = 0; k < r.poly_coeffs.size(); ++k) {
    value += r.poly_coeffs(k) * p;
    p *= s;
  }
  return value;
}

}  // namespace elsig
