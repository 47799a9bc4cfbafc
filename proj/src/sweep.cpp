#include "patchdiff/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <istream>
#include <mutex>
#include <optional>
#include <ostream>
#include <thread>

#include <Eigen/QR>

#include "patchdiff/numfmt.hpp"

namespace patchdiff {

void SweepPlan::validate() const {
  if (c_list.empty() || kappa_list.empty() || d_list.empty()) throw ConfigurationError("sweep plan: empty list");
  for (double c : c_list)
    if (!(c > 0.0) || !std::isfinite(c)) throw ConfigurationError("sweep plan: c must be > 0");
  for (double k : kappa_list)
    if (!(k > 0.0) || !std::isfinite(k)) throw ConfigurationError("sweep plan: kappa values must be > 0");
  for (std::size_t i = 1; i < d_list.size(); ++i)
    if (!(d_list[i] < d_list[i - 1])) throw ConfigurationError("sweep plan: d list must be strictly decreasing");
  for (double d : d_list) (void)grid_for_step(d);
  if (threads < 1) throw ConfigurationError("sweep plan: threads must be >= 1");
}

std::vector<double> default_c_list() {
  std::vector<double> out;
  for (int i = 2; i <= 19; ++i) out.push_back(i / 10.0);
  return out;
}

std::vector<double> default_kappa_list(int per_decade) {
  if (per_decade < 2) throw ConfigurationError("kappa list: need at least 2 values per decade");
  std::vector<double> out;
  const double lo = std::log10(1e-4), hi = std::log10(5e-3);
  const int m = static_cast<int>(std::ceil((hi - lo) * per_decade));
  for (int i = 0; i <= m; ++i) out.push_back(std::pow(10.0, lo + (hi - lo) * i / m));
  for (double k : {6e-3, 7e-3, 8e-3, 9e-3, 1e-2}) out.push_back(k);
  return out;
}

std::vector<double> default_d_list() { return {1.0 / 100, 1.0 / 200, 1.0 / 400}; }

std::vector<double> literal_d_list() { return {0.0100, 0.00222, 0.00167, 0.00125}; }

SweepPlan default_plan() {
  SweepPlan p;
  p.c_list = default_c_list();
  p.kappa_list = default_kappa_list();
  p.d_list = default_d_list();
  return p;
}

Grid2D grid_for_step(double d) {
  if (!(d > 0.0) || !std::isfinite(d)) throw ConfigurationError("grid step must be > 0");
  const double n = std::round(1.0 / d);
  if (n < 8 || n > 1e5) throw ConfigurationError("grid step " + fmt17(d) + " gives an unusable grid size");
  return Grid2D(static_cast<int>(n));
}

LinearD2Fit fit_d2(const std::vector<double>& d, const std::vector<double>& y) {
  if (d.size() != y.size() || d.empty()) throw DataError("d^2 fit: need matching, nonempty inputs");
  LinearD2Fit out;
  if (d.size() == 1) {
    out.C0 = y[0];
    return out;
  }
  Eigen::MatrixXd X(static_cast<Eigen::Index>(d.size()), 2);
  Eigen::VectorXd Y(static_cast<Eigen::Index>(d.size()));
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto e = static_cast<Eigen::Index>(i);
    X(e, 0) = 1.0;
    X(e, 1) = d[i] * d[i];
    Y[e] = y[i];
  }
  const double spread = X.col(1).maxCoeff() - X.col(1).minCoeff();
  if (!(spread > 1e-12 * X.col(1).maxCoeff())) throw DataError("d^2 fit: all grid steps are equal");
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  const Eigen::Vector2d beta = qr.solve(Y);
  out.C0 = beta[0];
  out.slope = beta[1];
  out.residual = std::sqrt((X * beta - Y).squaredNorm() / static_cast<double>(d.size()));
  return out;
}

DiffusivityRecord run_point(double c, double kappa, double d, const PatchParams& params, const SolverOptions& opt) {
  try {
    PatchParams p = params;
    p.c = c;
    p = make_patch_params(p.c, p.a1, p.a2, p.lambda);
    CellProblem cp(grid_for_step(d), p, opt);
    return cp.solve(kappa);
  } catch (const SolverError& e) {
    throw SolverError("(c=" + fmt17(c) + ", kappa=" + fmt17(kappa) + ", d=" + fmt17(d) + ") " + e.what(), e.trace());
  }
}

ExtrapolatedPoint extrapolate_d(const std::vector<DiffusivityRecord>& records, double diag_tol) {
  if (records.empty()) throw DataError("extrapolation: no records");
  ExtrapolatedPoint out;
  out.c = records.front().c;
  out.kappa = records.front().kappa;
  out.records = records;
  std::vector<double> d, cf, cv, h[4];
  for (const auto& r : records) {
    d.push_back(r.d);
    cf.push_back(r.C_flux);
    cv.push_back(r.C_var());
    for (int k = 0; k < 4; ++k) h[k].push_back(r.Hbar(k / 2, k % 2));
  }
  const LinearD2Fit fc = fit_d2(d, cf);
  out.slope = fc.slope;
  out.fit_residual = fc.residual;
  out.C_var_extrap = fit_d2(d, cv).C0;
  for (int k = 0; k < 4; ++k) out.Hbar_extrap(k / 2, k % 2) = fit_d2(d, h[k]).C0;

  const Eigen::Matrix2d S = 0.5 * (out.Hbar_extrap + out.Hbar_extrap.transpose());
  const auto ev = sym2_eigenvalues(S(0, 0), S(0, 1), S(1, 1));
  const double gap = ev[1] > 0.0 ? (ev[1] - ev[0]) / ev[1] : 0.0;
  out.C_extrap = gap < diag_tol ? 0.5 * (ev[0] + ev[1]) : ev[1];
  out.offdiag_ratio =
      std::max(std::abs(out.Hbar_extrap(0, 1)), std::abs(out.Hbar_extrap(1, 0))) / std::abs(out.C_extrap);
  return out;
}

SweepResult run_sweep(const SweepPlan& plan, const SweepProgress& progress) {
  plan.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t nk = plan.kappa_list.size();
  const std::size_t total = plan.c_list.size() * nk;

  SweepResult result;
  std::mutex mu;
  std::atomic<std::size_t> next{0};
  std::size_t done = 0;

  auto task = [&](double c) {
    // records[k] collects the per-grid results for kappa_list[k]; a failed kappa keeps its message.
    std::vector<std::vector<DiffusivityRecord>> records(nk);
    std::vector<std::string> error(nk);
    PatchParams p;
    bool params_ok = true;
    try {
      p = make_patch_params(c, plan.a1, plan.a2, plan.lambda);
    } catch (const Error& e) {
      for (auto& m : error) m = e.what();
      params_ok = false;
    }
    for (std::size_t g = 0; params_ok && g < plan.d_list.size(); ++g) {
      const double d = plan.d_list[g];
      std::optional<CellProblem> cp;
      try {
        cp.emplace(grid_for_step(d), p, plan.solver);
      } catch (const Error& e) {
        for (auto& m : error)
          if (m.empty()) m = e.what();
        continue;
      }
      for (std::size_t k = 0; k < nk; ++k) {
        if (!error[k].empty()) continue;
        try {
          records[k].push_back(cp->solve(plan.kappa_list[k]));
        } catch (const Error& e) {
          error[k] = "d=" + fmt17(d) + ": " + e.what();
        }
      }
    }
    std::vector<ExtrapolatedPoint> pts;
    std::vector<SweepFailure> fails;
    for (std::size_t k = 0; k < nk; ++k) {
      if (error[k].empty()) {
        try {
          pts.push_back(extrapolate_d(records[k], plan.solver.diag_tol));
          continue;
        } catch (const Error& e) {
          error[k] = e.what();
        }
      }
      fails.push_back({c, plan.kappa_list[k], error[k]});
    }
    std::lock_guard<std::mutex> lock(mu);
    for (auto& q : pts) result.points.push_back(std::move(q));
    for (auto& f : fails) result.failures.push_back(std::move(f));
    done += nk;
    if (progress) progress(c, done, total);
  };

  auto worker = [&] {
    for (std::size_t i = next++; i < plan.c_list.size(); i = next++) task(plan.c_list[i]);
  };
  const int width = std::min<int>(plan.threads, static_cast<int>(plan.c_list.size()));
  if (width <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < width; ++t) pool.emplace_back(worker);
  }

  auto key = [](double c, double k) { return std::make_pair(c, k); };
  std::sort(result.points.begin(), result.points.end(),
            [&](const auto& a, const auto& b) { return key(a.c, a.kappa) < key(b.c, b.kappa); });
  std::sort(result.failures.begin(), result.failures.end(),
            [&](const auto& a, const auto& b) { return key(a.c, a.kappa) < key(b.c, b.kappa); });
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (result.points.empty() && total > 0) {
    throw SolverError("sweep: every point failed; first failure: " + result.failures.front().message);
  }
  return result;
}

void write_sweep_csv(std::ostream& os, const std::vector<ExtrapolatedPoint>& points) {
  os << kSweepCsvHeader << '\n';
  for (const auto& p : points) {
    os << fmt17(p.c) << ',' << fmt17(p.kappa) << ',' << fmt17(p.C_extrap) << ',' << fmt17(p.slope) << ','
       << fmt17(p.fit_residual) << ',' << p.records.size() << ',' << fmt17(p.offdiag_ratio) << ','
       << fmt17(p.C_var_extrap) << '\n';
  }
}

void write_sweep_records_csv(std::ostream& os, const std::vector<ExtrapolatedPoint>& points) {
  os << kRecordCsvHeader << '\n';
  for (const auto& p : points)
    for (const auto& r : p.records) write_record_csv_row(os, r);
}

std::vector<ExtrapolatedPoint> read_sweep_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("sweep CSV: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kSweepCsvHeader) throw DataError("sweep CSV: unexpected header '" + line + "'");
  std::vector<ExtrapolatedPoint> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv(line);
    if (f.size() != 8) throw DataError("sweep CSV line " + std::to_string(lineno) + ": expected 8 columns");
    ExtrapolatedPoint p;
    p.c = parse_double(f[0]);
    p.kappa = parse_double(f[1]);
    p.C_extrap = parse_double(f[2]);
    p.slope = parse_double(f[3]);
    p.fit_residual = parse_double(f[4]);
    p.offdiag_ratio = parse_double(f[6]);
    p.C_var_extrap = parse_double(f[7]);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace patchdiff
