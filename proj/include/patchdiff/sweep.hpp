#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "patchdiff/cell_solver.hpp"

namespace patchdiff {

struct SweepPlan {
  std::vector<double> c_list;
  std::vector<double> kappa_list;
  std::vector<double> d_list;  // strictly decreasing; each d is rounded to the grid 1/round(1/d)
  double a1 = 0.05;
  double a2 = 0.3;
  double lambda = 1.0;
  SolverOptions solver;
  int threads = 1;

  void validate() const;
};

/// c = 0.2, 0.3, ..., 1.9.
std::vector<double> default_c_list();
/// `per_decade` log-spaced values on [1e-4, 5e-3] followed by a coarser tail up to 1e-2.
std::vector<double> default_kappa_list(int per_decade = 52);
/// 1/100, 1/200, 1/400.
std::vector<double> default_d_list();
/// 0.0100, 0.00222, 0.00167, 0.00125.
std::vector<double> literal_d_list();

SweepPlan default_plan();

/// Grid with n = round(1/d); throws when d does not correspond to a grid with n >= 8.
Grid2D grid_for_step(double d);

struct ExtrapolatedPoint {
  double c = 0.0;
  double kappa = 0.0;
  double C_extrap = 0.0;
  double slope = 0.0;         // coefficient of d^2
  double fit_residual = 0.0;  // RMS of C(d) - (C0 + s d^2)
  Eigen::Matrix2d Hbar_extrap = Eigen::Matrix2d::Zero();
  double offdiag_ratio = 0.0;  // max |Hbar_12|, |Hbar_21| over C_extrap
  double C_var_extrap = 0.0;
  std::vector<DiffusivityRecord> records;

  double nu() const { return C_extrap - kappa; }
};

struct LinearD2Fit {
  double C0 = 0.0;
  double slope = 0.0;
  double residual = 0.0;
};

/// Least squares of y(d) = C0 + s d^2.
LinearD2Fit fit_d2(const std::vector<double>& d, const std::vector<double>& y);

DiffusivityRecord run_point(double c, double kappa, double d, const PatchParams& params, const SolverOptions& opt = {});

/// Entrywise d -> 0 extrapolation of Hbar, then C from the extrapolated symmetric part with the same
/// mean-or-larger rule as a single solve.
ExtrapolatedPoint extrapolate_d(const std::vector<DiffusivityRecord>& records, double diag_tol = 1e-3);

struct SweepFailure {
  double c = 0.0;
  double kappa = 0.0;
  std::string message;
};

struct SweepResult {
  std::vector<ExtrapolatedPoint> points;  // sorted by (c, kappa)
  std::vector<SweepFailure> failures;
  double wall_seconds = 0.0;
};

using SweepProgress = std::function<void(double c, std::size_t done, std::size_t total)>;

/// One task per radius c; inside a task the patch field and the symbolic factorization of each grid
/// are reused across kappa.
SweepResult run_sweep(const SweepPlan& plan, const SweepProgress& progress = {});

inline const char* kSweepCsvHeader = "c,kappa,C_extrap,slope,residual,n_grids_used,offdiag_ratio,C_var_extrap";

void write_sweep_csv(std::ostream& os, const std::vector<ExtrapolatedPoint>& points);
void write_sweep_records_csv(std::ostream& os, const std::vector<ExtrapolatedPoint>& points);

/// Rows of a sweep CSV; per-d records are not restored.
std::vector<ExtrapolatedPoint> read_sweep_csv(std::istream& is);

}  // namespace patchdiff
