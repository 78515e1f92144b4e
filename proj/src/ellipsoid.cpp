#include "elsig/ellipsoid.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <chrono>
#include <cmath>
#include <string>

namespace elsig {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Beyond this many coefficients the dense QR is replaced by normal
// equations; the squared conditioning is acceptable for the large,
// well-scaled systems it is used on.
constexpr Index kQrTermLimit = 2500;

Vector pack(const Matrix& q, const Vector& p) {
  const Index d = p.size();
  Vector theta(quadric_terms(d));
  Index k = 0;
  for (Index i = 0; i < d; ++i) theta(k++) = q(i, i);
  for (Index i = 0; i < d; ++i)
    for (Index j = i + 1; j < d; ++j) theta(k++) = q(i, j);
  for (Index i = 0; i < d; ++i) theta(k++) = p(i);
  return theta;
}

void unpack(const VectorRef& theta, Index d, Matrix& q, Vector& p) {
  q.resize(d, d);
  p.resize(d);
  Index k = 0;
  for (Index i = 0; i < d; ++i) q(i, i) = theta(k++);
  for (Index i = 0; i < d; ++i)
    for (Index j = i + 1; j < d; ++j) {
      q(i, j) = theta(k);
      q(j, i) = theta(k);
      ++k;
    }
  for (Index i = 0; i < d; ++i) p(i) = theta(k++);
}

// One design row per point: [x_i^2 ..., 2 x_i x_j (i<j) ..., x_i ...].
// The factor 2 on cross terms makes the packed coefficient equal the
// symmetric matrix entry Q_ij.
Matrix quadric_design(const MatrixRef& points) {
  const Index n = points.rows();
  const Index d = points.cols();
  Matrix design(n, quadric_terms(d));
  for (Index r = 0; r < n; ++r) {
    Index k = 0;
    for (Index i = 0; i < d; ++i) design(r, k++) = points(r, i) * points(r, i);
    for (Index i = 0; i < d; ++i)
      for (Index j = i + 1; j < d; ++j)
        design(r, k++) = 2.0 * points(r, i) * points(r, j);
    for (Index i = 0; i < d; ++i) design(r, k++) = points(r, i);
  }
  return design;
}

struct LsqState {
  Vector centroid;           // subtracted from the points before fitting
  double point_scale = 1.0;  // shifted points were divided by this
  Matrix design;             // design of the shifted, scaled points
  Vector theta;              // solution in the working frame
  double rms_residual = 0.0;
};

LsqState solve_lsq(const MatrixRef& points) {
  const Index n = points.rows();
  const Index d = points.cols();
  if (d < 1) throw PreconditionError("quadric fit: empty points");
  const Index m = quadric_terms(d);
  if (n < m)
    throw PreconditionError("quadric fit: need at least d(d+3)/2 = " +
                            std::to_string(m) + " points, got " +
                            std::to_string(n));

  LsqState st;
  st.centroid = points.colwise().mean();
  Matrix shifted = points.rowwise() - st.centroid.transpose();
  st.point_scale = std::sqrt(shifted.rowwise().squaredNorm().mean());
  if (!(st.point_scale > 0.0))
    throw PreconditionError("quadric fit: all points coincide");

  st.design = quadric_design(shifted / st.point_scale);
  const Vector ones = Vector::Ones(n);

  if (m <= kQrTermLimit) {
    Eigen::ColPivHouseholderQR<Matrix> qr(st.design);
    qr.setThreshold(1e-10);
    if (qr.rank() < m)
      throw NumericError(
          "quadric fit: degenerate point configuration, design rank " +
          std::to_string(qr.rank()) + " < " + std::to_string(m));
    st.theta = qr.solve(ones);
  } else {
    Matrix normal = Matrix::Zero(m, m);
    normal.selfadjointView<Eigen::Lower>().rankUpdate(st.design.adjoint());
    normal = normal.selfadjointView<Eigen::Lower>();
    Vector rhs = st.design.adjoint() * ones;
    Eigen::LDLT<Matrix> ldlt(normal);
    const Vector dvec = ldlt.vectorD();
    if (ldlt.info() != Eigen::Success ||
        dvec.minCoeff() < 1e-14 * dvec.maxCoeff())
      throw NumericError(
          "quadric fit: degenerate point configuration (normal equations "
          "nearly singular)");
    st.theta = ldlt.solve(rhs);
  }
  st.rms_residual = (st.design * st.theta - ones).norm() /
                    std::sqrt(static_cast<double>(n));
  return st;
}

QuadricForm unscale(const LsqState& st, const VectorRef& theta, Index d) {
  QuadricForm q;
  unpack(theta, d, q.quadratic, q.linear);
  const double s = st.point_scale;
  q.quadratic /= s * s;
  q.linear /= s;
  q.offset = st.centroid;

  // Re-express in the origin frame when the origin lies strictly inside the
  // surface; there the classic RHS-1 form exists with the same definiteness.
  const Vector qo = q.quadratic * q.offset;
  const double k = 1.0 + q.linear.dot(q.offset) - q.offset.dot(qo);
  if (k > 1e-6) {
    q.linear = (q.linear - 2.0 * qo) / k;
    q.quadratic /= k;
    q.offset.resize(0);
  }
  return q;
}

// Projection onto {Q >= margin * I} in the packed coordinates: eigenvalue
// clipping on the quadratic block, linear block untouched.
Vector clip_to_cone(const VectorRef& theta, Index d, double margin) {
  Matrix q;
  Vector p;
  unpack(theta, d, q, p);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(q);
  Vector lam = eig.eigenvalues().cwiseMax(margin);
  Matrix clipped =
      eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
  clipped = 0.5 * (clipped + clipped.transpose());
  return pack(clipped, p);
}

double min_eigenvalue(const Matrix& sym) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  return eig.eigenvalues().minCoeff();
}

// Gradient of logdet(Q - margin*I) in packed coordinates (zero on the
// linear block).
Vector logdet_gradient(const Matrix& inv, Index d, Index m) {
  Vector g = Vector::Zero(m);
  Index k = 0;
  for (Index i = 0; i < d; ++i) g(k++) = inv(i, i);
  for (Index i = 0; i < d; ++i)
    for (Index j = i + 1; j < d; ++j) g(k++) = 2.0 * inv(i, j);
  return g;
}

// Hessian of -logdet(Q - margin*I): H_pq = tr(G B_p G B_q) with B the
// symmetric basis matrices of the packing.
Matrix logdet_curvature(const Matrix& inv, Index d, Index m) {
  Matrix h = Matrix::Zero(m, m);
  auto idx = [d](Index i, Index j) {
    // packed index of entry (i, j), i <= j
    if (i == j) return i;
    return d + (2 * d - i - 1) * i / 2 + (j - i - 1);
  };
  for (Index i = 0; i <= d - 1; ++i)
    for (Index j = i; j < d; ++j) {
      const Index p = idx(i, j);
      for (Index k = i; k < d; ++k)
        for (Index l = k; l < d; ++l) {
          const Index q = idx(k, l);
          if (q < p) continue;
          double v = inv(i, k) * inv(j, l) + inv(i, l) * inv(j, k);
          if (i != j) v *= 2.0;
          if (k != l) v *= 2.0;
          v *= 0.5;
          h(p, q) = v;
          h(q, p) = v;
        }
    }
  return h;
}

}  // namespace

Index quadric_terms(Index dim) { return dim * (dim + 3) / 2; }

double quadric_eval(const QuadricForm& q, const VectorRef& x) {
  if (q.offset.size() == 0) return x.dot(q.quadratic * x) + q.linear.dot(x);
  Vector u = x - q.offset;
  return u.dot(q.quadratic * u) + q.linear.dot(u);
}

QuadricForm fit_quadric_lsq(const MatrixRef& points) {
  LsqState st = solve_lsq(points);
  QuadricForm q = unscale(st, st.theta, points.cols());
  q.rms_residual = st.rms_residual;
  return q;
}

bool is_ellipsoid(const QuadricForm& q) {
  Matrix sym = 0.5 * (q.quadratic + q.quadratic.transpose());
  return min_eigenvalue(sym) > 0.0;
}

namespace {

// delta < 0 requests the scale-aware default margin, derived from the
// unconstrained solution: 1e-8 * trace(Q_lsq)/d. In the pre-scaled
// coordinates the point-scale factors cancel.
EllipsoidFitResult fit_ellipsoid_impl(const MatrixRef& points, double delta) {
  const auto t0 = Clock::now();
  const Index d = points.cols();
  const Index m = quadric_terms(d);
  const Index n = points.rows();

  LsqState st = solve_lsq(points);
  const double s2 = st.point_scale * st.point_scale;
  double margin;
  if (delta > 0.0) {
    margin = delta * s2;  // constraint expressed in scaled coords
  } else {
    double tr = 0.0;
    for (Index i = 0; i < d; ++i) tr += st.theta(i);
    margin = 1e-8 * std::abs(tr) / static_cast<double>(d);
    if (!(margin > 0.0)) margin = 1e-12;
  }

  EllipsoidFitResult res;
  {
    Matrix q;
    Vector p;
    unpack(st.theta, d, q, p);
    if (min_eigenvalue(q) >= margin) {
      res.quadric = unscale(st, st.theta, d);
      res.quadric.rms_residual = st.rms_residual;
      res.objective = st.rms_residual * std::sqrt(static_cast<double>(n));
      res.method = "lsq";
      res.seconds = seconds_since(t0);
      return res;
    }
  }
  res.constraint_active = true;

  Matrix normal = Matrix::Zero(m, m);
  normal.selfadjointView<Eigen::Lower>().rankUpdate(st.design.adjoint());
  normal = normal.selfadjointView<Eigen::Lower>();
  const Vector rhs = st.design.adjoint() * Vector::Ones(n);
  const double nn = static_cast<double>(n);

  auto objective_sq = [&](const Vector& th) {
    return th.dot(normal * th) - 2.0 * rhs.dot(th) + nn;
  };

  // Corrected alternation between the least-squares prox step and the cone:
  // equivalent to Dykstra-style splitting with the affine projection replaced
  // by the prox of the data term, since the unconstrained minimizer is a
  // single point.
  const double rho = normal.trace() / static_cast<double>(m);
  Eigen::LLT<Matrix> prox(normal + rho * Matrix::Identity(m, m));
  if (prox.info() != Eigen::Success)
    throw NumericError("fit_ellipsoid_specific: prox factorization failed");

  Vector z = clip_to_cone(st.theta, d, margin);
  Vector u = Vector::Zero(m);
  const int max_iter = static_cast<int>(10 * m);
  double prev_obj = std::sqrt(std::max(objective_sq(z), 0.0));
  bool converged = false;
  int it = 0;
  for (; it < max_iter; ++it) {
    Vector theta = prox.solve(rhs + rho * (z - u));
    z = clip_to_cone(theta + u, d, margin);
    u += theta - z;
    const double obj = std::sqrt(std::max(objective_sq(z), 0.0));
    const double change = std::abs(obj - prev_obj) / std::max(1.0, obj);
    const double split = (theta - z).norm() / std::max(1.0, z.norm());
    prev_obj = obj;
    if (change < 1e-12 && split < 1e-8) {
      converged = true;
      ++it;
      break;
    }
  }

  if (converged) {
    res.quadric = unscale(st, z, d);
    res.quadric.rms_residual = std::sqrt(std::max(objective_sq(z), 0.0) / nn);
    res.objective = prev_obj;
    res.iterations = it;
    res.method = "alternating";
    res.seconds = seconds_since(t0);
    return res;
  }

  // Alternation stalled: polish with a log-det barrier Newton method from the
  // best feasible iterate.
  if (m > 2000) {
    QuadricForm best = unscale(st, z, d);
    best.rms_residual = std::sqrt(std::max(objective_sq(z), 0.0) / nn);
    throw FitNonconvergence(
        "fit_ellipsoid_specific: alternation stalled after " +
            std::to_string(it) + " iterations (residual " +
            std::to_string(best.rms_residual) + "), problem too large for "
            "barrier fallback",
        best, prev_obj);
  }

  Vector theta = clip_to_cone(z, d, margin * 2.0);  // strictly interior start
  double mu = std::max(objective_sq(theta) / nn, 1e-8);
  int newton_its = 0;
  for (int outer = 0; outer < 40 && mu > 1e-16; ++outer, mu *= 0.2) {
    for (int inner = 0; inner < 50; ++inner) {
      Matrix q;
      Vector p;
      unpack(theta, d, q, p);
      Matrix shifted = q - margin * Matrix::Identity(d, d);
      Eigen::LLT<Matrix> llt(shifted);
      if (llt.info() != Eigen::Success) break;
      Matrix inv = llt.solve(Matrix::Identity(d, d));

      Vector grad = 2.0 * (normal * theta - rhs) - mu * logdet_gradient(inv, d, m);
      Matrix hess = 2.0 * normal + mu * logdet_curvature(inv, d, m);
      Vector step = hess.ldlt().solve(-grad);
      ++newton_its;

      double alpha = 1.0;
      const double f0 = objective_sq(theta) -
                        mu * 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
      bool accepted = false;
      for (int ls = 0; ls < 40; ++ls, alpha *= 0.5) {
        Vector cand = theta + alpha * step;
        Matrix qc;
        Vector pc;
        unpack(cand, d, qc, pc);
        Eigen::LLT<Matrix> lltc(Matrix(qc - margin * Matrix::Identity(d, d)));
        if (lltc.info() != Eigen::Success) continue;
        const double fc =
            objective_sq(cand) -
            mu * 2.0 * Matrix(lltc.matrixL()).diagonal().array().log().sum();
        if (fc <= f0 - 1e-4 * alpha * grad.dot(-step)) {
          theta = cand;
          accepted = true;
          break;
        }
      }
      if (!accepted || grad.norm() < 1e-10 * std::max(1.0, rhs.norm())) break;
    }
  }

  Vector final_theta = clip_to_cone(theta, d, margin);
  res.quadric = unscale(st, final_theta, d);
  res.quadric.rms_residual =
      std::sqrt(std::max(objective_sq(final_theta), 0.0) / nn);
  res.objective = std::sqrt(std::max(objective_sq(final_theta), 0.0));
  res.iterations = it + newton_its;
  res.method = "barrier";
  res.seconds = seconds_since(t0);
  return res;
}

}  // namespace

EllipsoidFitResult fit_ellipsoid_specific(const MatrixRef& points,
                                          double delta) {
  if (!(delta > 0.0))
    throw PreconditionError("fit_ellipsoid_specific: delta must be > 0");
  return fit_ellipsoid_impl(points, delta);
}

EllipsoidFitResult fit_ellipsoid_specific(const MatrixRef& points) {
  return fit_ellipsoid_impl(points, -1.0);
}

EllipsoidForm quadric_to_center(const QuadricForm& q) {
  Matrix sym = 0.5 * (q.quadratic + q.quadratic.transpose());
  Eigen::LLT<Matrix> llt(sym);
  if (llt.info() != Eigen::Success || !is_ellipsoid(q))
    throw PreconditionError(
        "quadric_to_center: quadratic part is not positive definite");
  Vector qinv_p = llt.solve(q.linear);
  EllipsoidForm e;
  e.center = -0.5 * qinv_p;
  if (q.offset.size() > 0) e.center += q.offset;
  const double k = 1.0 + 0.25 * q.linear.dot(qinv_p);
  e.shape = sym / k;
  return e;
}

AffineForm center_to_affine(const EllipsoidForm& e) {
  const Index d = e.dim();
  Eigen::LLT<Matrix> llt(e.shape);
  if (llt.info() != Eigen::Success)
    throw NumericError(
        "center_to_affine: Cholesky failed; shape matrix is numerically "
        "indefinite (consider the ellipsoid-specific fit)");
  Matrix inv = llt.solve(Matrix::Identity(d, d));
  inv = 0.5 * (inv + inv.transpose());
  Eigen::LLT<Matrix> llt_inv(inv);
  if (llt_inv.info() != Eigen::Success)
    throw NumericError("center_to_affine: inverse lost definiteness");
  Matrix l = llt_inv.matrixL();

  Eigen::JacobiSVD<Matrix> svd(l, Eigen::ComputeFullU);
  AffineForm a;
  a.rotation = svd.matrixU();
  a.axes = svd.singularValues();  // descending by construction
  a.center = e.center;
  if (a.axes(d - 1) <= 0.0)
    throw NumericError("center_to_affine: degenerate axis length");
  apply_sign_convention(a.rotation);
  return a;
}

double affine_unit_radius(const AffineForm& a, const VectorRef& x) {
  if (x.size() != a.dim() || a.center.size() != a.dim())
    throw PreconditionError("affine_unit_radius: dimension mismatch");
  Vector local = a.rotation.transpose() * (x - a.center);
  return (local.array() / a.axes.array()).matrix().norm();
}

void apply_sign_convention(Matrix& basis) {
  for (Index j = 0; j < basis.cols(); ++j) {
    for (Index i = 0; i < basis.rows(); ++i) {
      const double v = basis(i, j);
      if (std::abs(v) > 1e-12) {
        if (v < 0.0) basis.col(j) = -basis.col(j);
        break;
      }
    }
  }
}

}  // namespace elsig
