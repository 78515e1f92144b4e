#pragma once

#include <vector>

#include "elsig/model.hpp"
#include "elsig/types.hpp"

namespace elsig {

/// Subtracts the mean entry; the result sums to zero. Centering a logprob
/// vector recovers the centered logits because centering commutes with
/// log-softmax.
Vector center(const VectorRef& v);

/// Centers every column in place-free form.
Matrix center_columns(const MatrixRef& m);

struct RankEstimate {
  Index rank = 0;         // singular values above rel_tol * largest
  Index affine_rank = 0;  // rank after also subtracting the column mean;
                          // drops by one for layer-norm models (the ellipse
                          // lives in one fewer dimension)
  double gap = 0.0;       // ratio of last kept to first dropped value
  bool ambiguous = false; // gap below 10x around the cutoff
  Vector singular_values;
};

/// Counts singular values of the column-centered matrix above
/// rel_tol * sigma_max. Flags the estimate as ambiguous when the spectrum
/// has no 10x gap at the cutoff.
RankEstimate estimate_rank(const LogprobMatrix& m, double rel_tol = 1e-6);

/// Down-projection (coordinate selection on centered vectors) and the
/// up-projection solved from d anchor columns. Immutable once built.
struct ProjectionPair {
  Index vocab = 0;
  Index dim = 0;
  std::vector<Index> rows;         // selected coordinates of the centered vector
  std::vector<Index> anchor_cols;  // columns the up-projection was solved from
  Matrix up;                       // vocab x dim, inverts the selection on the
                                   // span of the centered observations
  double max_rel_residual = 0.0;   // worst round-trip error over the inputs
};

/// Solves the up-projection from d anchor columns of the centered matrix.
/// Falls back to column-pivoted row/column selection when the leading
/// d x d block is ill-conditioned (condition number above 1e8).
ProjectionPair build_projections(const LogprobMatrix& m, Index dim);

/// A * C * l: centers then selects the pair's coordinate rows.
Vector down_project(const ProjectionPair& pair, const VectorRef& logprob);

/// Lifts a down-projected vector back to the centered v-dimensional space.
Vector up_project(const ProjectionPair& pair, const VectorRef& y);

/// Down-projects every column; rows of the result are points in R^dim.
Matrix down_project_all(const ProjectionPair& pair, const MatrixRef& data);

}  // namespace elsig
