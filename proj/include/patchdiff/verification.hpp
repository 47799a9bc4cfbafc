#pragma once

#include <numbers>
#include <string>
#include <vector>

#include "patchdiff/cli_io.hpp"
#include "patchdiff/powerlaw_fit.hpp"
#include "patchdiff/spde_sim.hpp"
#include "patchdiff/sweep.hpp"

namespace patchdiff {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// One line: "PASS name (1.2 s): detail".
std::string format_check(const CheckResult& r);

/// C_extrap >= kappa (1 - 1e-4) at every point, and the sweep finished within `budget_seconds`.
CheckResult check_lower_bound(const std::vector<ExtrapolatedPoint>& points, double sweep_seconds,
                              double budget_seconds = 1800.0);

/// Extrapolated points at kappa for each c, on the grid steps `d_list`.
std::vector<ExtrapolatedPoint> extrapolated_points(const std::vector<double>& c_list, double kappa,
                                                   const std::vector<double>& d_list,
                                                   const SolverOptions& solver = {});

/// |Hbar_12| / C <= tol after extrapolation.
CheckResult check_diagonality(const std::vector<ExtrapolatedPoint>& points, double tol = 1e-3);

/// |C_flux - C_var| <= tol C_flux after extrapolation.
CheckResult check_flux_variational(const std::vector<ExtrapolatedPoint>& points, double tol = 1e-2);

/// 2 (c + 4 c^2 / (1 - 2c)^2), finite for c < 1/2.
double separated_patch_constant(double c);

/// C - kappa <= (1 + slack) L(c) kappa at every point; points must have c < 1/2.
CheckResult check_upper_bounds(const std::vector<ExtrapolatedPoint>& points, double slack = 0.05);

struct RegimeSignatures {
  CheckResult check;
  std::vector<RegimeRow> rows;            // every c present in the points
  std::vector<std::vector<ScanEntry>> scans;  // aligned with rows
};

/// Exponent and intercept signatures over the c values of the sweep.
RegimeSignatures check_regime_signatures(const std::vector<ExtrapolatedPoint>& points,
                                         const std::vector<double>& kappa_star_list = default_kappa_star_list(),
                                         const JackknifeOptions& jk = {}, const FitOptions& fit = {});

/// Brute-force scan with the distance filter; positive worst margin within `budget_seconds`.
CheckResult check_cone_lemma(int n_x = 128, int n_angle = 360, double budget_seconds = 10.0);

/// All 8 isometries leave A invariant to tol on an n-grid for each c.
CheckResult check_isometries(int n = 128, const std::vector<double>& c_list = {0.4, 1.0, 1.4}, double tol = 1e-12);

/// Bit-exact symmetry, constants in the kernel and observed consistency order >= min_order.
CheckResult check_operator_properties(double min_order = 1.9);

/// Covariance identity against assemble_A, energy cancellation of the noise and mean preservation.
CheckResult check_spde_identities(int n = 128, const std::vector<int>& N_list = {2, 4, 8}, int n_fields = 100,
                                  std::uint64_t seed = 1);

struct TrendOptions {
  double c = 1.0;
  double kappa = 0.05;
  int n = 128;
  int paths = 64;
  std::vector<int> N_list = {2, 4, 8};
  double decay = std::numbers::e;  // T_end such that the mode decays by this factor at C_eff
  std::vector<double> d_list = default_d_list();
  std::uint64_t seed = 1;
  int threads = 1;
  double budget_seconds = 900.0;
};

struct TrendReport {
  CheckResult check;
  double C_eff = 0.0;
  double T_end = 0.0;
  std::vector<Ensemble> ensembles;
  std::vector<ErrorCurve> errors;
};

/// Sup-over-time Monte Carlo error against the homogenized heat solution, strictly decreasing in N.
TrendReport check_scaling_trend(const TrendOptions& opt = {});

/// Exact recovery of 2 kappa^0.7 + 0.1 and jackknife coverage over `trials` noisy data sets.
CheckResult check_fit_machinery(int trials = 100, int resamples = 200, std::uint64_t seed = 1);

}  // namespace patchdiff
