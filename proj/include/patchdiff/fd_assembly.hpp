#pragma once

#include <Eigen/Sparse>

#include <iosfwd>

#include "patchdiff/grid.hpp"

namespace patchdiff {

enum class Direction { Forward, Backward };

/// One-sided periodic difference along axis 1 or 2.
ScalarField2D apply_diff(const ScalarField2D& f, int axis, Direction dir);

/// Discretization of u -> -div((kappa I + A) grad u) on the periodic grid, built as
///   T = 1/2 (D+)^T H (D+) + 1/2 (D-)^T H (D-)
/// with H evaluated at nodes. Couplings live on edges: axis neighbours and the
/// anti-diagonal pair (i+1, j) -- (i, j+1). Each edge weight is stored once, so the
/// matrix is symmetric bit for bit, and the diagonal is minus the off-diagonal row sum.
class SparseSymmetricOperator {
 public:
  using Matrix = Eigen::SparseMatrix<double>;

  SparseSymmetricOperator() = default;

  const Grid2D& grid() const noexcept { return grid_; }
  Eigen::Index dim() const noexcept { return static_cast<Eigen::Index>(grid_.size()); }
  double kappa() const noexcept { return kappa_; }

  const Matrix& matrix() const noexcept { return matrix_; }
  Eigen::VectorXd apply(const Eigen::VectorXd& u) const { return matrix_ * u; }
  double max_diagonal() const { return matrix_.diagonal().maxCoeff(); }

  /// Coordinate triplets (row, col, value), one line each, 17 significant digits.
  void write_triplets(std::ostream& os) const;

  friend SparseSymmetricOperator assemble_T(const SymMatrixField& A, double kappa);

 private:
  Grid2D grid_;
  double kappa_ = 0.0;
  Matrix matrix_;
};

SparseSymmetricOperator assemble_T(const SymMatrixField& A, double kappa);

/// Centered divergence 1/2 sum_i (D_i- + D_i+) F_i.
ScalarField2D divergence(const VectorField2D& F);

/// Centered gradient 1/2 (D+ + D-) per axis.
VectorField2D centered_gradient(const ScalarField2D& u);

/// div(A e_i), the right-hand side of the i-th cell problem (i in {1, 2}).
ScalarField2D cell_rhs(const SymMatrixField& A, int i);

}  // namespace patchdiff
