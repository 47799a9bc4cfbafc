#pragma once

#include <Eigen/Core>

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "patchdiff/fd_assembly.hpp"
#include "patchdiff/grid.hpp"
#include "patchdiff/patch_field.hpp"

namespace patchdiff {

enum class PreconditionerKind { None, Jacobi, Cholesky };

struct SolverOptions {
  double tol = 1e-10;  // relative residual |b - T x| / |b|
  int max_iter = 20000;
  PreconditionerKind preconditioner = PreconditionerKind::Cholesky;
  double diag_tol = 1e-3;        // accepted |H12| / C and eigenvalue gap
  double crosscheck_tol = 1e-2;  // accepted |C_flux - C_var| / C_flux
};

/// Approximate inverse of T on mean-zero fields; `apply` may return a vector with a kernel component.
class Preconditioner {
 public:
  virtual ~Preconditioner() = default;
  virtual Eigen::VectorXd apply(const Eigen::VectorXd& r) const = 0;
};

class JacobiPreconditioner final : public Preconditioner {
 public:
  explicit JacobiPreconditioner(const SparseSymmetricOperator& T);
  Eigen::VectorXd apply(const Eigen::VectorXd& r) const override;

 private:
  Eigen::VectorXd inv_diag_;
};

/// Sparse Cholesky of T with the last node pinned. Exact on mean-zero right-hand sides, so
/// projected CG preconditioned by it converges in one or two steps. The symbolic analysis is
/// kept across `refactor` calls on operators with the same pattern (same grid, any kappa > 0).
class CholeskyPreconditioner final : public Preconditioner {
 public:
  explicit CholeskyPreconditioner(const SparseSymmetricOperator& T);
  ~CholeskyPreconditioner() override;
  CholeskyPreconditioner(const CholeskyPreconditioner&) = delete;
  CholeskyPreconditioner& operator=(const CholeskyPreconditioner&) = delete;

  void refactor(const SparseSymmetricOperator& T);
  Eigen::VectorXd apply(const Eigen::VectorXd& r) const override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct CgResult {
  Eigen::VectorXd x;
  int iterations = 0;
  double residual = 0.0;        // final true relative residual
  std::vector<double> trace;    // recursive relative residual per iteration
};

/// Conjugate gradients restricted to mean-zero fields: rhs, residuals and the returned
/// iterate are projected onto the complement of the constants.
CgResult projected_cg(const SparseSymmetricOperator& T, const Eigen::VectorXd& rhs, double tol, int max_iter,
                      const Preconditioner* M = nullptr);

/// Unique mean-zero solution of T phi = rhs.
ScalarField2D solve_cell(const SparseSymmetricOperator& T, const ScalarField2D& rhs, double tol, int max_iter,
                         PreconditionerKind kind = PreconditionerKind::Cholesky, CgResult* info = nullptr);

struct CellSolution {
  ScalarField2D phi1;
  ScalarField2D phi2;
  std::array<int, 2> iterations{};
  std::array<double, 2> residuals{};
};

struct HomogenizedMatrix {
  Eigen::Matrix2d Hbar = Eigen::Matrix2d::Zero();
  double eig_lo = 0.0;  // eigenvalues of the symmetric part
  double eig_hi = 0.0;
  double relative_gap = 0.0;  // (eig_hi - eig_lo) / eig_hi
  double C = 0.0;             // mean of the eigenvalues when the gap is small, else eig_hi
};

/// Hbar_ij = mean over nodes of [(kappa I + A)(e_j + grad phi_j)]_i with the centered gradient.
HomogenizedMatrix effective_matrix_flux(const SymMatrixField& A, double kappa, const CellSolution& sol,
                                        double diag_tol = 1e-3);

enum class GradientForm {
  Centered,  // (xi + grad phi) with the centered gradient
  Split,     // average of the forward- and backward-difference energies; matches T exactly
};

/// mean over nodes of (xi + grad phi)^T (kappa I + A) (xi + grad phi).
double effective_scalar_variational(const SymMatrixField& A, double kappa, const Eigen::Vector2d& xi,
                                    const ScalarField2D& phi, GradientForm form = GradientForm::Centered);

/// Terms of the variational energy: kappa, kappa |grad phi|^2 and the A-energy of xi + grad phi.
struct EnergyParts {
  double kappa_part = 0.0;
  double kappa_gradient_part = 0.0;
  double patch_part = 0.0;
  double total() const { return kappa_part + kappa_gradient_part + patch_part; }
};
EnergyParts variational_energy_parts(const SymMatrixField& A, double kappa, const Eigen::Vector2d& xi,
                                     const ScalarField2D& phi);

/// Mean of |grad phi|^2 (centered gradient).
double gradient_norm_sq(const ScalarField2D& phi);

struct EigenResult {
  double value = 0.0;
  Eigen::VectorXd vector;
  int iterations = 0;
};

/// Smallest nonzero eigenvalue of T on mean-zero fields by inverse iteration.
EigenResult principal_eigenvalue(const SparseSymmetricOperator& T, double tol = 1e-11, int max_iter = 500);

/// (2 / d^2) (1 - cos(2 pi d)): ground eigenvalue of the periodic 5-point Laplacian.
double discrete_laplacian_ground(const Grid2D& grid);

struct DiffusivityRecord {
  double c = 0.0;
  double kappa = 0.0;
  double d = 0.0;
  Eigen::Matrix2d Hbar = Eigen::Matrix2d::Zero();
  double C_flux = 0.0;
  double C_var_e1 = 0.0;
  double C_var_e2 = 0.0;
  double eig_lo = 0.0;
  double eig_hi = 0.0;
  double offdiag_ratio = 0.0;
  double grad_norm_sq = 0.0;
  int cg_iters = 0;
  double residual = 0.0;

  double C_var() const { return 0.5 * (C_var_e1 + C_var_e2); }
  double crosscheck_gap() const;
};

/// Cell problems for one patch field on one grid, solved for any number of kappa values.
/// The patch field, right-hand sides and the symbolic factorization are shared across solves.
class CellProblem {
 public:
  CellProblem(const Grid2D& grid, const PatchParams& params, SolverOptions opt = {});
  /// Arbitrary coefficient field (c is reported as `c_label`).
  CellProblem(SymMatrixField A, double c_label, SolverOptions opt = {});
  ~CellProblem();
  CellProblem(CellProblem&&) noexcept;
  CellProblem& operator=(CellProblem&&) noexcept;

  const SymMatrixField& field() const noexcept { return A_; }
  const Grid2D& grid() const noexcept { return A_.grid(); }
  const SolverOptions& options() const noexcept { return opt_; }

  DiffusivityRecord solve(double kappa, CellSolution* solution = nullptr);

 private:
  SymMatrixField A_;
  double c_ = 0.0;
  SolverOptions opt_;
  ScalarField2D rhs1_, rhs2_;
  std::unique_ptr<CholeskyPreconditioner> chol_;
};

inline const char* kRecordCsvHeader =
    "c,kappa,d,H11,H12,H21,H22,C_flux,C_var_e1,C_var_e2,offdiag_ratio,grad_norm_sq,cg_iters,residual";

void write_record_csv_row(std::ostream& os, const DiffusivityRecord& r);
DiffusivityRecord parse_record_csv_row(const std::string& line);

}  // namespace patchdiff
