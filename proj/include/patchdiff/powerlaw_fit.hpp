#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace patchdiff {

struct FitPoint {
  double kappa = 0.0;
  double nu = 0.0;  // additional diffusivity C - kappa
};

struct FitOptions {
  double kappa_min = 1e-4;  // exclusive lower end of every window
  int max_iter = 500;
  std::vector<double> start_exponents{0.5, 0.7, 1.0};
};

/// f(kappa) = a kappa^n + q with a = exp(log_a).
struct FitResult {
  double log_a = 0.0;
  double a = 0.0;
  double n = 0.0;
  double q = 0.0;
  double sigma_n = 0.0;
  double sigma_q = 0.0;
  double kappa_star = 0.0;
  double chi2 = 0.0;
  int n_points = 0;
  int iterations = 0;
  bool converged = false;
  /// The power-law term carries no variation over the window (a at its zero boundary or n at 0);
  /// only a + q, or q alone, is meaningful.
  bool degenerate = false;

  double operator()(double kappa) const;
};

/// Points with kappa in (opt.kappa_min, kappa_star].
std::vector<FitPoint> fit_window(const std::vector<FitPoint>& points, double kappa_star, const FitOptions& opt = {});

/// Levenberg-Marquardt on (log_a, n, q) with a central finite-difference Jacobian, started from each
/// exponent in opt.start_exponents; the lowest chi2 wins.
FitResult fit_powerlaw(const std::vector<FitPoint>& points, double kappa_star, const FitOptions& opt = {});

struct JackknifeOptions {
  double drop_fraction = 0.95;
  int n_resamples = 200;
  std::uint64_t seed = 1;
  int threads = 1;
};

struct JackknifeResult {
  FitResult full;          // fit on every point of the window
  double n_est = 0.0;      // bias-corrected
  double q_est = 0.0;
  double log_a_est = 0.0;
  double sigma_n = 0.0;
  double sigma_q = 0.0;
  double sigma_log_a = 0.0;
  int kept = 0;            // points per subsample
  int dropped = 0;
  int resamples_used = 0;  // subsample fits that succeeded
};

/// Delete-d jackknife over random subsamples that keep ceil((1 - drop_fraction) m) of the m window points.
/// Each subsample draws from its own generator seeded by (seed, index).
JackknifeResult jackknife(const std::vector<FitPoint>& points, double kappa_star, const JackknifeOptions& jk = {},
                          const FitOptions& opt = {});

struct ScanEntry {
  double kappa_star = 0.0;
  bool ok = false;
  std::string error;
  JackknifeResult result;
  bool n_drift = false;  // n moved by more than 2 sigma_n from the previous successful window
};

std::vector<ScanEntry> stability_scan(const std::vector<FitPoint>& points, const std::vector<double>& kappa_star_list,
                                      const JackknifeOptions& jk = {}, const FitOptions& opt = {});

/// Window ends used for the regime analysis.
std::vector<double> default_kappa_star_list();

/// The smallest successful window, with its statistical error combined in quadrature with half the
/// spread of the estimates over the drift-free windows.
struct RegimeEstimate {
  double kappa_star = 0.0;
  double n = 0.0;
  double q = 0.0;
  double sigma_n = 0.0;
  double sigma_q = 0.0;
  double spread_n = 0.0;
  double spread_q = 0.0;
  bool ok = false;
};
RegimeEstimate summarize_scan(const std::vector<ScanEntry>& scan);

inline const char* kFitCsvHeader = "c,kappa_star,a,n,q,sigma_n,sigma_q,chi2,converged";

void write_fit_csv_row(std::ostream& os, double c, const ScanEntry& e);

}  // namespace patchdiff
