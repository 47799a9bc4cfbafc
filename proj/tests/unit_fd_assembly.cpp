#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "patchdiff/fd_assembly.hpp"
#include "patchdiff/patch_field.hpp"

using namespace patchdiff;

namespace {

ScalarField2D random_field(const Grid2D& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N;
  ScalarField2D f(g);
  for (auto& v : f.values) v = N(rng);
  return f;
}

constexpr double kTwoPi = 6.283185307179586;

}  // namespace

TEST_CASE("apply_diff on a linear-in-index field wraps periodically") {
  const Grid2D g(8);
  ScalarField2D f(g);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) f(i, j) = i;
  const auto fwd = apply_diff(f, 1, Direction::Forward);
  const auto bwd = apply_diff(f, 1, Direction::Backward);
  CHECK(fwd(3, 2) == doctest::Approx(8.0));
  CHECK(fwd(7, 2) == doctest::Approx(-7.0 * 8.0));
  CHECK(bwd(0, 5) == doctest::Approx(-7.0 * 8.0));
  CHECK(bwd(4, 5) == doctest::Approx(8.0));
  const auto across = apply_diff(f, 2, Direction::Forward);
  CHECK(across.values.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("kappa-only operator is the 5-point Laplacian") {
  const Grid2D g(16);
  const SymMatrixField zero(g);
  const double kappa = 0.7;
  const auto T = assemble_T(zero, kappa);
  const double inv = 1.0 / (g.d() * g.d());
  CHECK(T.matrix().coeff(0, 0) == doctest::Approx(4.0 * kappa * inv));
  CHECK(T.matrix().coeff(0, static_cast<Eigen::Index>(g.index(1, 0))) == doctest::Approx(-kappa * inv));
  CHECK(T.matrix().coeff(0, static_cast<Eigen::Index>(g.index(0, -1))) == doctest::Approx(-kappa * inv));
  CHECK(T.matrix().coeff(0, static_cast<Eigen::Index>(g.index(1, -1))) == 0.0);
  // Fourier mode eigenvalue.
  ScalarField2D u(g);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) u(i, j) = std::cos(kTwoPi * (i + 2 * j) / 16.0);
  const double lam = kappa * 2.0 * inv * ((1 - std::cos(kTwoPi / 16)) + (1 - std::cos(2 * kTwoPi / 16)));
  CHECK((T.apply(u.values) - lam * u.values).cwiseAbs().maxCoeff() <= 1e-10 * lam);
}

TEST_CASE("T is bit-symmetric with constants in its kernel") {
  for (double c : {0.4, 1.0, 1.4}) {
    const Grid2D g(64);
    const auto A = assemble_A(g, make_patch_params(c));
    const auto T = assemble_T(A, 1e-3);
    const SparseSymmetricOperator::Matrix diff = T.matrix() - SparseSymmetricOperator::Matrix(T.matrix().transpose());
    double asym = 0.0;
    for (int k = 0; k < diff.outerSize(); ++k)
      for (SparseSymmetricOperator::Matrix::InnerIterator it(diff, k); it; ++it) asym = std::max(asym, std::abs(it.value()));
    CHECK(asym == 0.0);
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(T.dim());
    CHECK(T.apply(ones).cwiseAbs().maxCoeff() <= 1e-12 * T.max_diagonal());
    CHECK(T.matrix().nonZeros() <= 7 * T.dim());
  }
}

TEST_CASE("T is positive semidefinite: energy equals the split-gradient form") {
  const Grid2D g(32);
  const auto A = assemble_A(g, make_patch_params(1.0));
  const double kappa = 0.01;
  const auto T = assemble_T(A, kappa);
  const auto u = random_field(g, 7);
  double energy = 0.0;
  for (Direction dir : {Direction::Forward, Direction::Backward}) {
    const auto g1 = apply_diff(u, 1, dir);
    const auto g2 = apply_diff(u, 2, dir);
    for (Eigen::Index k = 0; k < u.values.size(); ++k) {
      const double a = g1.values[k], b = g2.values[k];
      energy += 0.5 * (kappa * (a * a + b * b) + A.a11.values[k] * a * a + 2 * A.a12.values[k] * a * b +
                       A.a22.values[k] * b * b);
    }
  }
  const double quad = u.values.dot(T.apply(u.values));
  CHECK(quad > 0.0);
  CHECK(quad == doctest::Approx(energy).epsilon(1e-11));
}

TEST_CASE("negative kappa is rejected") {
  const Grid2D g(16);
  CHECK_THROWS_AS(assemble_T(SymMatrixField(g), -1e-3), DomainError);
}

TEST_CASE("second-order consistency on a smooth coefficient") {
  // -div(H grad u) with u = sin(X) cos(Y), X = 2 pi x1, Y = 2 pi x2.
  auto run = [](int n) {
    const Grid2D g(n);
    SymMatrixField H(g);
    ScalarField2D u(g), exact(g);
    const double w = kTwoPi;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double X = w * i / n, Y = w * j / n;
        H.a11(i, j) = 2 + std::sin(X);
        H.a22(i, j) = 2 + std::cos(Y);
        H.a12(i, j) = 0.5 * std::sin(X + Y);
        u(i, j) = std::sin(X) * std::cos(Y);
        const double ux = w * std::cos(X) * std::cos(Y), uy = -w * std::sin(X) * std::sin(Y);
        const double uxx = -w * w * std::sin(X) * std::cos(Y), uyy = uxx;
        const double uxy = -w * w * std::cos(X) * std::sin(Y);
        const double dF1 = w * std::cos(X) * ux + H.a11(i, j) * uxx + 0.5 * w * std::cos(X + Y) * uy +
                           H.a12(i, j) * uxy;
        const double dF2 = 0.5 * w * std::cos(X + Y) * ux + H.a12(i, j) * uxy - w * std::sin(Y) * uy +
                           H.a22(i, j) * uyy;
        exact(i, j) = -(dF1 + dF2);
      }
    const auto T = assemble_T(H, 0.0);
    return (T.apply(u.values) - exact.values).cwiseAbs().maxCoeff();
  };
  const double e1 = run(64), e2 = run(128), e3 = run(256);
  CHECK(std::log2(e1 / e2) >= 1.9);
  CHECK(std::log2(e2 / e3) >= 1.9);
}

TEST_CASE("cell_rhs and divergence") {
  const Grid2D g(32);
  SUBCASE("constant A has zero right-hand side") {
    SymMatrixField A(g);
    A.a11.values.setConstant(1.3);
    A.a12.values.setConstant(-0.2);
    A.a22.values.setConstant(0.9);
    CHECK(cell_rhs(A, 1).values.cwiseAbs().maxCoeff() == 0.0);
    CHECK(cell_rhs(A, 2).values.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("rhs has zero mean and equals the centered divergence of the column") {
    const auto A = assemble_A(g, make_patch_params(1.0));
    VectorField2D col(g);
    col.x1 = A.a11;
    col.x2 = A.a12;
    const auto b = cell_rhs(A, 1);
    CHECK(std::abs(b.mean()) <= 1e-12 * b.values.cwiseAbs().maxCoeff());
    CHECK((b.values - divergence(col).values).cwiseAbs().maxCoeff() <= 1e-12 * b.values.cwiseAbs().maxCoeff());
  }
  SUBCASE("centered gradient of a Fourier mode") {
    ScalarField2D u(g);
    for (int i = 0; i < 32; ++i)
      for (int j = 0; j < 32; ++j) u(i, j) = std::sin(kTwoPi * i / 32.0);
    const auto G = centered_gradient(u);
    const double factor = std::sin(kTwoPi / 32.0) / g.d();
    CHECK(G.x1(5, 3) == doctest::Approx(factor * std::cos(kTwoPi * 5 / 32.0)));
    CHECK(G.x2.values.cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("triplet dump lists every stored entry") {
  const Grid2D g(8);
  const auto T = assemble_T(assemble_A(g, make_patch_params(1.0)), 0.1);
  std::ostringstream os;
  T.write_triplets(os);
  const std::string s = os.str();
  CHECK(static_cast<Eigen::Index>(std::count(s.begin(), s.end(), '\n')) >= T.matrix().nonZeros());
}
