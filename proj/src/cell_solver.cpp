#include "patchdiff/cell_solver.hpp"

#include <Eigen/CholmodSupport>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <ostream>
#include <random>

#include "patchdiff/numfmt.hpp"

namespace patchdiff {

namespace {

void project_mean_zero(Eigen::VectorXd& v) { v.array() -= v.mean(); }

// Incompatible right-hand sides: the grid sum must vanish up to this fraction of max |b|.
constexpr double kCompatibilityTol = 1e-8;

}  // namespace

// ---------------------------------------------------------------------------
// Preconditioners

JacobiPreconditioner::JacobiPreconditioner(const SparseSymmetricOperator& T) {
  inv_diag_ = T.matrix().diagonal().cwiseInverse();
}

Eigen::VectorXd JacobiPreconditioner::apply(const Eigen::VectorXd& r) const { return inv_diag_.cwiseProduct(r); }

struct CholeskyPreconditioner::Impl {
  using Matrix = Eigen::SparseMatrix<double>;
  Eigen::CholmodSupernodalLLT<Matrix, Eigen::Lower> llt;
  Eigen::Index dim = 0;
  bool analyzed = false;

  Matrix pinned(const SparseSymmetricOperator& T) const {
    // Dropping the last row and column removes the constant kernel.
    Matrix P = T.matrix().topLeftCorner(dim - 1, dim - 1);
    P.makeCompressed();
    return P;
  }
};

CholeskyPreconditioner::CholeskyPreconditioner(const SparseSymmetricOperator& T) : impl_(std::make_unique<Impl>()) {
  refactor(T);
}

CholeskyPreconditioner::~CholeskyPreconditioner() = default;

void CholeskyPreconditioner::refactor(const SparseSymmetricOperator& T) {
  if (impl_->analyzed && impl_->dim != T.dim())
    throw PreconditionError("CholeskyPreconditioner: operator size changed between factorizations");
  impl_->dim = T.dim();
  const Impl::Matrix P = impl_->pinned(T);
  if (!impl_->analyzed) {
    impl_->llt.cholmod().nmethods = 1;
    impl_->llt.cholmod().method[0].ordering = CHOLMOD_NESDIS;
    impl_->llt.analyzePattern(P);
    impl_->analyzed = true;
  }
  impl_->llt.factorize(P);
  if (impl_->llt.info() != Eigen::Success)
    throw SolverError("sparse Cholesky failed: operator is not positive definite on mean-zero fields (kappa=" +
                      fmt17(T.kappa()) + ")");
}

Eigen::VectorXd CholeskyPreconditioner::apply(const Eigen::VectorXd& r) const {
  const Eigen::Index m = impl_->dim - 1;
  Eigen::VectorXd z(impl_->dim);
  z.head(m) = impl_->llt.solve(r.head(m));
  z[m] = 0.0;
  return z;
}

// ---------------------------------------------------------------------------
// Projected conjugate gradients

CgResult projected_cg(const SparseSymmetricOperator& T, const Eigen::VectorXd& rhs, double tol, int max_iter,
                      const Preconditioner* M) {
  if (rhs.size() != T.dim()) throw PreconditionError("projected_cg: rhs size does not match operator");
  if (!(tol > 0.0)) throw PreconditionError("projected_cg: tolerance must be > 0");

  CgResult out;
  out.x = Eigen::VectorXd::Zero(T.dim());
  const double bmax = rhs.cwiseAbs().maxCoeff();
  if (bmax == 0.0) return out;
  if (std::abs(rhs.sum()) > kCompatibilityTol * bmax * static_cast<double>(rhs.size()))
    throw DataError("projected_cg: right-hand side has nonzero mean " + fmt17(rhs.mean()) +
                    "; the singular system is incompatible");

  Eigen::VectorXd b = rhs;
  project_mean_zero(b);
  const double bnorm = b.norm();
  if (bnorm == 0.0) return out;

  auto precondition = [&](const Eigen::VectorXd& r) {
    Eigen::VectorXd z = M ? M->apply(r) : r;
    project_mean_zero(z);
    return z;
  };

  Eigen::VectorXd& x = out.x;
  Eigen::VectorXd r = b;
  int it = 0;
  // Outer loop restarts from the true residual if the recursive one drifted.
  while (it < max_iter) {
    Eigen::VectorXd z = precondition(r);
    Eigen::VectorXd p = z;
    double rz = r.dot(z);
    double rel = r.norm() / bnorm;
    while (rel > tol && it < max_iter) {
      const Eigen::VectorXd q = T.apply(p);
      const double pq = p.dot(q);
      if (!(pq > 0.0)) break;
      const double alpha = rz / pq;
      x.noalias() += alpha * p;
      r.noalias() -= alpha * q;
      project_mean_zero(r);
      ++it;
      rel = r.norm() / bnorm;
      out.trace.push_back(rel);
      if (rel <= tol) break;
      z = precondition(r);
      const double rz_new = r.dot(z);
      p = z + (rz_new / rz) * p;
      rz = rz_new;
    }
    project_mean_zero(x);
    r = b - T.apply(x);
    project_mean_zero(r);
    out.residual = r.norm() / bnorm;
    if (out.residual <= tol) break;
    if (!(rel <= tol) && it >= max_iter) break;
    if (out.trace.size() >= 2 && rel == out.trace.back() && !(out.residual < rel)) break;
  }
  out.iterations = it;
  if (!(out.residual <= tol))
    throw SolverError("projected_cg: no convergence after " + std::to_string(it) + " iterations (relative residual " +
                          fmt17(out.residual) + ", tolerance " + fmt17(tol) + ")",
                      out.trace);
  return out;
}

ScalarField2D solve_cell(const SparseSymmetricOperator& T, const ScalarField2D& rhs, double tol, int max_iter,
                         PreconditionerKind kind, CgResult* info) {
  if (!(rhs.grid == T.grid())) throw PreconditionError("solve_cell: rhs grid does not match operator grid");
  if (!(T.kappa() > 0.0)) throw DomainError("solve_cell: kappa must be > 0 for a well-posed cell problem");
  std::unique_ptr<Preconditioner> M;
  switch (kind) {
    case PreconditionerKind::None: break;
    case PreconditionerKind::Jacobi: M = std::make_unique<JacobiPreconditioner>(T); break;
    case PreconditionerKind::Cholesky: M = std::make_unique<CholeskyPreconditioner>(T); break;
  }
  CgResult res = projected_cg(T, rhs.values, tol, max_iter, M.get());
  ScalarField2D out(T.grid(), res.x);
  if (info) *info = std::move(res);
  return out;
}

// ---------------------------------------------------------------------------
// Effective coefficients

HomogenizedMatrix effective_matrix_flux(const SymMatrixField& A, double kappa, const CellSolution& sol,
                                        double diag_tol) {
  const VectorField2D g1 = centered_gradient(sol.phi1);
  const VectorField2D g2 = centered_gradient(sol.phi2);
  const std::size_t m = A.grid().size();
  // Column j of the flux average uses corrector j.
  double s11 = 0.0, s21 = 0.0, s12 = 0.0, s22 = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    const auto e = static_cast<Eigen::Index>(k);
    const double h11 = kappa + A.a11.values[e];
    const double h12 = A.a12.values[e];
    const double h22 = kappa + A.a22.values[e];
    const double u1 = 1.0 + g1.x1.values[e], u2 = g1.x2.values[e];  // e1 + grad phi1
    const double v1 = g2.x1.values[e], v2 = 1.0 + g2.x2.values[e];  // e2 + grad phi2
    s11 += h11 * u1 + h12 * u2;
    s21 += h12 * u1 + h22 * u2;
    s12 += h11 * v1 + h12 * v2;
    s22 += h12 * v1 + h22 * v2;
  }
  const double inv = 1.0 / static_cast<double>(m);
  HomogenizedMatrix out;
  out.Hbar << s11 * inv, s12 * inv, s21 * inv, s22 * inv;
  const Eigen::Matrix2d S = 0.5 * (out.Hbar + out.Hbar.transpose());
  const auto ev = sym2_eigenvalues(S(0, 0), S(0, 1), S(1, 1));
  out.eig_lo = ev[0];
  out.eig_hi = ev[1];
  out.relative_gap = ev[1] > 0.0 ? (ev[1] - ev[0]) / ev[1] : 0.0;
  out.C = out.relative_gap < diag_tol ? 0.5 * (ev[0] + ev[1]) : ev[1];
  return out;
}

namespace {

void check_unit(const Eigen::Vector2d& xi) {
  if (!xi.allFinite() || std::abs(xi.norm() - 1.0) > 1e-12)
    throw DomainError("variational energy: direction xi must be a unit vector");
}

}  // namespace

double effective_scalar_variational(const SymMatrixField& A, double kappa, const Eigen::Vector2d& xi,
                                    const ScalarField2D& phi, GradientForm form) {
  check_unit(xi);
  if (!std::isfinite(kappa) || kappa < 0.0) throw DomainError("variational energy: kappa must be >= 0");
  const Grid2D& g = A.grid();
  if (!(phi.grid == g)) throw PreconditionError("variational energy: field grid mismatch");
  const int n = g.n();
  const double inv_d = n;
  auto energy_at = [&](int i, int j, double g1, double g2) {
    const auto k = static_cast<Eigen::Index>(g.index(i, j));
    const double f1 = xi[0] + g1, f2 = xi[1] + g2;
    return (kappa + A.a11.values[k]) * f1 * f1 + 2.0 * A.a12.values[k] * f1 * f2 + (kappa + A.a22.values[k]) * f2 * f2;
  };
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (form == GradientForm::Centered) {
        const double g1 = 0.5 * inv_d * (phi(i + 1, j) - phi(i - 1, j));
        const double g2 = 0.5 * inv_d * (phi(i, j + 1) - phi(i, j - 1));
        acc += energy_at(i, j, g1, g2);
      } else {
        const double f1 = inv_d * (phi(i + 1, j) - phi(i, j)), f2 = inv_d * (phi(i, j + 1) - phi(i, j));
        const double b1 = inv_d * (phi(i, j) - phi(i - 1, j)), b2 = inv_d * (phi(i, j) - phi(i, j - 1));
        acc += 0.5 * (energy_at(i, j, f1, f2) + energy_at(i, j, b1, b2));
      }
    }
  }
  return acc / static_cast<double>(g.size());
}

EnergyParts variational_energy_parts(const SymMatrixField& A, double kappa, const Eigen::Vector2d& xi,
                                     const ScalarField2D& phi) {
  check_unit(xi);
  const VectorField2D gr = centered_gradient(phi);
  const std::size_t m = A.grid().size();
  double grad_sq = 0.0, patch = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    const auto e = static_cast<Eigen::Index>(k);
    const double g1 = gr.x1.values[e], g2 = gr.x2.values[e];
    grad_sq += g1 * g1 + g2 * g2;
    const double f1 = xi[0] + g1, f2 = xi[1] + g2;
    patch += A.a11.values[e] * f1 * f1 + 2.0 * A.a12.values[e] * f1 * f2 + A.a22.values[e] * f2 * f2;
  }
  const double inv = 1.0 / static_cast<double>(m);
  return {kappa, kappa * grad_sq * inv, patch * inv};
}

double gradient_norm_sq(const ScalarField2D& phi) {
  const VectorField2D gr = centered_gradient(phi);
  return (gr.x1.values.squaredNorm() + gr.x2.values.squaredNorm()) / static_cast<double>(phi.grid.size());
}

double discrete_laplacian_ground(const Grid2D& grid) {
  const double d = grid.d();
  return 2.0 / (d * d) * (1.0 - std::cos(2.0 * std::numbers::pi * d));
}

EigenResult principal_eigenvalue(const SparseSymmetricOperator& T, double tol, int max_iter) {
  if (!(T.kappa() > 0.0)) throw DomainError("principal_eigenvalue: kappa must be > 0");
  CholeskyPreconditioner chol(T);
  std::mt19937_64 rng(0x5eed);
  std::normal_distribution<double> gauss;
  Eigen::VectorXd x(T.dim());
  for (Eigen::Index k = 0; k < x.size(); ++k) x[k] = gauss(rng);
  project_mean_zero(x);
  x.normalize();
  EigenResult out;
  double lambda = x.dot(T.apply(x));
  for (int it = 1; it <= max_iter; ++it) {
    Eigen::VectorXd y = chol.apply(x);
    project_mean_zero(y);
    y.normalize();
    const double next = y.dot(T.apply(y));
    x = std::move(y);
    out.iterations = it;
    if (std::abs(next - lambda) <= tol * std::abs(next)) {
      out.value = next;
      out.vector = x;
      return out;
    }
    lambda = next;
  }
  throw SolverError("principal_eigenvalue: inverse iteration stagnated after " + std::to_string(max_iter) +
                    " iterations");
}

// ---------------------------------------------------------------------------
// CellProblem

double DiffusivityRecord::crosscheck_gap() const {
  const double gap = std::max(std::abs(C_flux - C_var_e1), std::abs(C_flux - C_var_e2));
  return gap / C_flux;
}

CellProblem::CellProblem(const Grid2D& grid, const PatchParams& params, SolverOptions opt)
    : CellProblem(assemble_A(grid, params), params.c, opt) {}

CellProblem::CellProblem(SymMatrixField A, double c_label, SolverOptions opt)
    : A_(std::move(A)), c_(c_label), opt_(opt), rhs1_(cell_rhs(A_, 1)), rhs2_(cell_rhs(A_, 2)) {}

CellProblem::~CellProblem() = default;
CellProblem::CellProblem(CellProblem&&) noexcept = default;
CellProblem& CellProblem::operator=(CellProblem&&) noexcept = default;

DiffusivityRecord CellProblem::solve(double kappa, CellSolution* solution) {
  if (!std::isfinite(kappa) || !(kappa > 0.0)) throw DomainError("CellProblem::solve: kappa must be > 0");
  const SparseSymmetricOperator T = assemble_T(A_, kappa);

  std::unique_ptr<Preconditioner> local;
  const Preconditioner* M = nullptr;
  switch (opt_.preconditioner) {
    case PreconditionerKind::None: break;
    case PreconditionerKind::Jacobi:
      local = std::make_unique<JacobiPreconditioner>(T);
      M = local.get();
      break;
    case PreconditionerKind::Cholesky:
      if (chol_)
        chol_->refactor(T);
      else
        chol_ = std::make_unique<CholeskyPreconditioner>(T);
      M = chol_.get();
      break;
  }

  CellSolution sol;
  const CgResult r1 = projected_cg(T, rhs1_.values, opt_.tol, opt_.max_iter, M);
  const CgResult r2 = projected_cg(T, rhs2_.values, opt_.tol, opt_.max_iter, M);
  sol.phi1 = ScalarField2D(grid(), r1.x);
  sol.phi2 = ScalarField2D(grid(), r2.x);
  sol.iterations = {r1.iterations, r2.iterations};
  sol.residuals = {r1.residual, r2.residual};

  const HomogenizedMatrix hm = effective_matrix_flux(A_, kappa, sol, opt_.diag_tol);
  DiffusivityRecord rec;
  rec.c = c_;
  rec.kappa = kappa;
  rec.d = grid().d();
  rec.Hbar = hm.Hbar;
  rec.C_flux = hm.C;
  rec.eig_lo = hm.eig_lo;
  rec.eig_hi = hm.eig_hi;
  rec.C_var_e1 = effective_scalar_variational(A_, kappa, Eigen::Vector2d(1.0, 0.0), sol.phi1);
  rec.C_var_e2 = effective_scalar_variational(A_, kappa, Eigen::Vector2d(0.0, 1.0), sol.phi2);
  rec.offdiag_ratio = std::max(std::abs(hm.Hbar(0, 1)), std::abs(hm.Hbar(1, 0))) / hm.C;
  rec.grad_norm_sq = gradient_norm_sq(sol.phi1);
  rec.cg_iters = r1.iterations + r2.iterations;
  rec.residual = std::max(r1.residual, r2.residual);
  if (solution) *solution = std::move(sol);
  return rec;
}

// ---------------------------------------------------------------------------
// CSV

void write_record_csv_row(std::ostream& os, const DiffusivityRecord& r) {
  os << fmt17(r.c) << ',' << fmt17(r.kappa) << ',' << fmt17(r.d) << ',' << fmt17(r.Hbar(0, 0)) << ','
     << fmt17(r.Hbar(0, 1)) << ',' << fmt17(r.Hbar(1, 0)) << ',' << fmt17(r.Hbar(1, 1)) << ',' << fmt17(r.C_flux)
     << ',' << fmt17(r.C_var_e1) << ',' << fmt17(r.C_var_e2) << ',' << fmt17(r.offdiag_ratio) << ','
     << fmt17(r.grad_norm_sq) << ',' << r.cg_iters << ',' << fmt17(r.residual) << '\n';
}

DiffusivityRecord parse_record_csv_row(const std::string& line) {
  const auto f = split_csv(line);
  if (f.size() != 14) throw DataError("record row: expected 14 columns, got " + std::to_string(f.size()));
  DiffusivityRecord r;
  r.c = parse_double(f[0]);
  r.kappa = parse_double(f[1]);
  r.d = parse_double(f[2]);
  r.Hbar << parse_double(f[3]), parse_double(f[4]), parse_double(f[5]), parse_double(f[6]);
  r.C_flux = parse_double(f[7]);
  r.C_var_e1 = parse_double(f[8]);
  r.C_var_e2 = parse_double(f[9]);
  r.offdiag_ratio = parse_double(f[10]);
  r.grad_norm_sq = parse_double(f[11]);
  r.cg_iters = static_cast<int>(parse_double(f[12]));
  r.residual = parse_double(f[13]);
  return r;
}

}  // namespace patchdiff
