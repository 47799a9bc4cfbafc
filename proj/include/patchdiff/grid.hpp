#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>

#include "patchdiff/errors.hpp"

namespace patchdiff {

/// Uniform periodic n x n grid on the unit torus. Node (i, j) sits at x = (i d, j d);
/// i runs along axis 1, j along axis 2, and the flat index is row-major: i * n + j.
class Grid2D {
 public:
  Grid2D() = default;
  explicit Grid2D(int n) : n_(n), d_(1.0 / n) {
    if (n < 8) throw PreconditionError("Grid2D: n must be >= 8, got " + std::to_string(n));
  }

  int n() const noexcept { return n_; }
  double d() const noexcept { return d_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(n_) * static_cast<std::size_t>(n_); }

  int wrap(int i) const noexcept {
    const int m = i % n_;
    return m < 0 ? m + n_ : m;
  }
  std::size_t index(int i, int j) const noexcept {
    return static_cast<std::size_t>(wrap(i)) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(wrap(j));
  }
  std::array<double, 2> position(int i, int j) const noexcept { return {i * d_, j * d_}; }

  bool operator==(const Grid2D& other) const noexcept { return n_ == other.n_; }

 private:
  int n_ = 0;
  double d_ = 0.0;
};

struct ScalarField2D {
  Grid2D grid;
  Eigen::VectorXd values;

  ScalarField2D() = default;
  explicit ScalarField2D(const Grid2D& g) : grid(g), values(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g.size()))) {}
  ScalarField2D(const Grid2D& g, Eigen::VectorXd v) : grid(g), values(std::move(v)) {
    if (static_cast<std::size_t>(values.size()) != grid.size())
      throw PreconditionError("ScalarField2D: value count does not match grid");
  }

  double& operator()(int i, int j) { return values[static_cast<Eigen::Index>(grid.index(i, j))]; }
  double operator()(int i, int j) const { return values[static_cast<Eigen::Index>(grid.index(i, j))]; }

  double mean() const { return values.mean(); }
};

struct VectorField2D {
  ScalarField2D x1;
  ScalarField2D x2;

  VectorField2D() = default;
  explicit VectorField2D(const Grid2D& g) : x1(g), x2(g) {}

  const Grid2D& grid() const noexcept { return x1.grid; }
  const ScalarField2D& component(int axis) const { return axis == 1 ? x1 : x2; }
  ScalarField2D& component(int axis) { return axis == 1 ? x1 : x2; }
};

/// Per-node symmetric 2x2 matrix; only the three independent entries are stored.
struct SymMatrixField {
  ScalarField2D a11;
  ScalarField2D a12;
  ScalarField2D a22;

  SymMatrixField() = default;
  explicit SymMatrixField(const Grid2D& g) : a11(g), a12(g), a22(g) {}

  const Grid2D& grid() const noexcept { return a11.grid; }

  Eigen::Matrix2d at(std::size_t k) const {
    const auto e = static_cast<Eigen::Index>(k);
    Eigen::Matrix2d m;
    m << a11.values[e], a12.values[e], a12.values[e], a22.values[e];
    return m;
  }

  /// Entry (r, c) of the matrix at node k, with r, c in {1, 2}.
  double entry(std::size_t k, int r, int c) const {
    const auto e = static_cast<Eigen::Index>(k);
    if (r == 1 && c == 1) return a11.values[e];
    if (r == 2 && c == 2) return a22.values[e];
    return a12.values[e];
  }

  SymMatrixField& operator*=(double s) {
    a11.values *= s;
    a12.values *= s;
    a22.values *= s;
    return *this;
  }
};

}  // namespace patchdiff
