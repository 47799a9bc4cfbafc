#include "patchdiff/fd_assembly.hpp"

#include <cmath>
#include <ostream>
#include <vector>

namespace patchdiff {

namespace {

void check_axis(int axis) {
  if (axis != 1 && axis != 2) throw PreconditionError("axis must be 1 or 2");
}

}  // namespace

ScalarField2D apply_diff(const ScalarField2D& f, int axis, Direction dir) {
  check_axis(axis);
  const Grid2D& g = f.grid;
  const int n = g.n();
  const double inv_d = static_cast<double>(n);
  ScalarField2D out(g);
  const int s = dir == Direction::Forward ? 1 : -1;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double here = f(i, j);
      const double there = axis == 1 ? f(i + s, j) : f(i, j + s);
      out(i, j) = dir == Direction::Forward ? (there - here) * inv_d : (here - there) * inv_d;
    }
  }
  return out;
}

SparseSymmetricOperator assemble_T(const SymMatrixField& A, double kappa) {
  if (!std::isfinite(kappa) || kappa < 0.0) throw DomainError("assemble_T: kappa must be finite and >= 0");
  const Grid2D& g = A.grid();
  const int n = g.n();
  const double w = 0.5 * static_cast<double>(n) * static_cast<double>(n);  // 1 / (2 d^2)

  auto h11 = [&](int i, int j) { return kappa + A.a11(i, j); };
  auto h22 = [&](int i, int j) { return kappa + A.a22(i, j); };
  auto h12 = [&](int i, int j) { return A.a12(i, j); };

  // Edge weights indexed by their lower-left node.
  //   e1(i,j): (i,j)--(i+1,j); e2(i,j): (i,j)--(i,j+1); ed(i,j): (i+1,j)--(i,j+1).
  const std::size_t m = g.size();
  std::vector<double> e1(m), e2(m), ed(m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const std::size_t p = g.index(i, j);
      // Forward split at (i,j) and backward split at the far endpoint both touch the edge.
      e1[p] = -w * ((h11(i, j) + h12(i, j)) + (h11(i + 1, j) + h12(i + 1, j)));
      e2[p] = -w * ((h12(i, j) + h22(i, j)) + (h12(i, j + 1) + h22(i, j + 1)));
      ed[p] = w * (h12(i, j) + h12(i + 1, j + 1));
    }
  }

  std::vector<double> diag(m, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const std::size_t p = g.index(i, j);
      // Row p touches: e1 at p and at (i-1,j); e2 at p and at (i,j-1); ed at (i-1,j) and (i,j-1).
      const double off = e1[p] + e1[g.index(i - 1, j)] + e2[p] + e2[g.index(i, j - 1)] + ed[g.index(i - 1, j)] +
                         ed[g.index(i, j - 1)];
      diag[p] = -off;
    }
  }

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(7 * m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const auto p = static_cast<int>(g.index(i, j));
      const auto q1 = static_cast<int>(g.index(i + 1, j));
      const auto q2 = static_cast<int>(g.index(i, j + 1));
      trip.emplace_back(p, p, diag[static_cast<std::size_t>(p)]);
      trip.emplace_back(p, q1, e1[static_cast<std::size_t>(p)]);
      trip.emplace_back(q1, p, e1[static_cast<std::size_t>(p)]);
      trip.emplace_back(p, q2, e2[static_cast<std::size_t>(p)]);
      trip.emplace_back(q2, p, e2[static_cast<std::size_t>(p)]);
      trip.emplace_back(q1, q2, ed[static_cast<std::size_t>(p)]);
      trip.emplace_back(q2, q1, ed[static_cast<std::size_t>(p)]);
    }
  }

  SparseSymmetricOperator T;
  T.grid_ = g;
  T.kappa_ = kappa;
  T.matrix_.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  T.matrix_.setFromTriplets(trip.begin(), trip.end());
  T.matrix_.makeCompressed();
  return T;
}

void SparseSymmetricOperator::write_triplets(std::ostream& os) const {
  const auto old_prec = os.precision(17);
  for (Eigen::Index col = 0; col < matrix_.outerSize(); ++col) {
    for (Matrix::InnerIterator it(matrix_, col); it; ++it) os << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
  }
  os.precision(old_prec);
}

ScalarField2D divergence(const VectorField2D& F) {
  const Grid2D& g = F.grid();
  const int n = g.n();
  const double half_inv_d = 0.5 * n;
  ScalarField2D out(g);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      out(i, j) = half_inv_d * ((F.x1(i + 1, j) - F.x1(i - 1, j)) + (F.x2(i, j + 1) - F.x2(i, j - 1)));
    }
  }
  return out;
}

VectorField2D centered_gradient(const ScalarField2D& u) {
  const Grid2D& g = u.grid;
  const int n = g.n();
  const double half_inv_d = 0.5 * n;
  VectorField2D out(g);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      out.x1(i, j) = half_inv_d * (u(i + 1, j) - u(i - 1, j));
      out.x2(i, j) = half_inv_d * (u(i, j + 1) - u(i, j - 1));
    }
  }
  return out;
}

ScalarField2D cell_rhs(const SymMatrixField& A, int i) {
  check_axis(i);
  VectorField2D F(A.grid());
  F.x1 = i == 1 ? A.a11 : A.a12;
  F.x2 = i == 1 ? A.a12 : A.a22;
  return divergence(F);
}

}  // namespace patchdiff
