#pragma once

#include <string>

#include "elsig/types.hpp"

namespace elsig {

/// Quadric surface {x : (x-o)'Q(x-o) + P'(x-o) = 1} with Q symmetric.
/// The offset o is the working frame of the fit (the sample centroid): in
/// that frame a true ellipsoid always has positive-definite Q, whereas the
/// origin frame flips Q's sign whenever the origin falls outside the
/// surface and cannot represent surfaces through the origin at all. An
/// empty offset means zero.
struct QuadricForm {
  Matrix quadratic;  // Q, d x d symmetric
  Vector linear;     // P, length d
  Vector offset;     // o; empty = origin frame
  double rms_residual = 0.0;  // sqrt(mean (eq - 1)^2) over the fit points
  Index dim() const { return linear.size(); }
};

/// Center form {x : (x-b)'E(x-b) = 1} with E symmetric positive definite.
struct EllipsoidForm {
  Matrix shape;   // E
  Vector center;  // b
  Index dim() const { return center.size(); }
};

/// Affine form: the ellipsoid is the image of the unit sphere under
/// x -> rotation * diag(axes) * x + center. Axes sorted descending; every
/// rotation column has a positive first nonzero entry.
struct AffineForm {
  Matrix rotation;  // U, orthogonal
  Vector axes;      // diagonal of Sigma, strictly positive, descending
  Vector center;    // b (may be longer than axes for lifted ellipses)
  Index dim() const { return axes.size(); }
};

struct EllipsoidFitResult {
  QuadricForm quadric;
  double objective = 0.0;         // ||design * theta - 1||
  int iterations = 0;             // 0 when the PD constraint was inactive
  bool constraint_active = false;
  double seconds = 0.0;           // wall clock for the whole fit
  std::string method;             // "lsq", "alternating", or "barrier"
};

/// Thrown when the constrained solver runs out of iterations; carries the
/// best feasible iterate found.
struct FitNonconvergence : NumericError {
  FitNonconvergence(const std::string& what, QuadricForm best_, double obj)
      : NumericError(what), best(std::move(best_)), objective(obj) {}
  QuadricForm best;
  double objective;
};

/// Number of quadric coefficients in d dimensions: d(d+3)/2.
Index quadric_terms(Index dim);

/// Evaluates (x-o)'Q(x-o) + P'(x-o); equals 1 on the surface.
double quadric_eval(const QuadricForm& q, const VectorRef& x);

/// Plain linear least squares over the quadric coefficients. Points are
/// rows; they are shifted to their centroid and scaled to unit RMS radius
/// before the solve, and the returned form carries the centroid as its
/// offset. Requires n >= d(d+3)/2 and a full-rank design; reports the RMS
/// equation residual.
QuadricForm fit_quadric_lsq(const MatrixRef& points);

/// True iff the symmetrized quadratic part is positive definite.
bool is_ellipsoid(const QuadricForm& q);

/// Least squares constrained to Q >= delta * I, so the result is always a
/// genuine ellipsoid. Solved by corrected alternation between the
/// least-squares prox step and eigenvalue clipping onto the cone, with a
/// log-det barrier Newton fallback if the alternation stalls.
EllipsoidFitResult fit_ellipsoid_specific(const MatrixRef& points,
                                          double delta);

/// Same, with delta defaulted to 1e-8 * trace(Q_lsq)/d (scale-aware margin).
EllipsoidFitResult fit_ellipsoid_specific(const MatrixRef& points);

/// Completes the square: b = -Q^{-1}P/2, E = Q / (1 + P'Q^{-1}P/4).
EllipsoidForm quadric_to_center(const QuadricForm& q);

/// E^{-1} = LL', then SVD of L; axes descending, sign convention applied.
AffineForm center_to_affine(const EllipsoidForm& e);

/// ||diag(axes)^{-1} U' (x - center)||; equals 1 on the surface.
double affine_unit_radius(const AffineForm& a, const VectorRef& x);

/// Flips columns so each has a positive first nonzero entry.
void apply_sign_convention(Matrix& basis);

}  // namespace elsig
