#pragma once

#include <cstdint>
#include <vector>

#include "elsig/types.hpp"

namespace elsig {

struct BenchPoint {
  Index dim = 0;
  std::vector<double> seconds;  // one entry per repeat
  double median = 0.0;
};

struct BenchExtrapolation {
  Index dim = 0;
  double seconds = 0.0;  // polynomial extrapolation, not a measurement
};

struct BenchResult {
  std::vector<BenchPoint> points;
  Vector poly_coeffs;        // degree 0..6, in the scaled variable d/basis
  double basis_scale = 1.0;  // largest measured dimension
  std::vector<BenchExtrapolation> extrapolations;
};

/// Times the ellipsoid-specific fit on synthetic on-surface clouds of
/// ceil(sample_factor * d(d+3)/2) points per dimension, fits a degree-6
/// polynomial to the medians, and evaluates it at the requested
/// extrapolation dimensions. Dimensions must be ascending and at most 512.
BenchResult bench_fit(const std::vector<Index>& dims, double sample_factor,
                      int repeats, const std::vector<Index>& extrapolate_dims,
                      std::uint64_t seed = 0);

/// Evaluates the fitted polynomial at an arbitrary dimension.
double bench_poly_eval(const BenchResult& r, Index dim);

}  // namespace elsig
