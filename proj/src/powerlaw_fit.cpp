#include "patchdiff/powerlaw_fit.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>

#include "patchdiff/errors.hpp"
#include "patchdiff/numfmt.hpp"

namespace patchdiff {

namespace {

// Internally the model is fitted as y = exp(b) x^n + r with x = kappa / kappa_ref and y = nu / scale,
// which keeps all three parameters of order one.
struct Scaled {
  Eigen::ArrayXd x, y;
  double kappa_ref = 1.0;
  double scale = 1.0;
};

Scaled rescale(const std::vector<FitPoint>& pts) {
  Scaled s;
  const auto m = static_cast<Eigen::Index>(pts.size());
  s.x.resize(m);
  s.y.resize(m);
  s.kappa_ref = 0.0;
  s.scale = 0.0;
  for (const auto& p : pts) {
    s.kappa_ref = std::max(s.kappa_ref, p.kappa);
    s.scale = std::max(s.scale, std::abs(p.nu));
  }
  if (!(s.scale > 0.0)) s.scale = 1.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    s.x[i] = pts[static_cast<std::size_t>(i)].kappa / s.kappa_ref;
    s.y[i] = pts[static_cast<std::size_t>(i)].nu / s.scale;
  }
  return s;
}

Eigen::ArrayXd model(const Eigen::Vector3d& p, const Eigen::ArrayXd& x) {
  return std::exp(p[0]) * x.pow(p[1]) + p[2];
}

Eigen::MatrixXd jacobian(const Eigen::Vector3d& p, const Eigen::ArrayXd& x) {
  Eigen::MatrixXd J(x.size(), 3);
  for (int k = 0; k < 3; ++k) {
    const double h = 1e-6 * (1.0 + std::abs(p[k]));
    Eigen::Vector3d lo = p, hi = p;
    lo[k] -= h;
    hi[k] += h;
    J.col(k) = ((model(hi, x) - model(lo, x)) / (2.0 * h)).matrix();
  }
  return J;
}

struct LmOutcome {
  Eigen::Vector3d p;
  double chi2 = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

LmOutcome levenberg_marquardt(Eigen::Vector3d p, const Scaled& s, int max_iter) {
  LmOutcome out;
  auto chi2_of = [&](const Eigen::Vector3d& q) { return (model(q, s.x) - s.y).matrix().squaredNorm(); };
  double chi2 = chi2_of(p);
  double mu = 1e-3;
  int it = 0;
  for (; it < max_iter; ++it) {
    const Eigen::MatrixXd J = jacobian(p, s.x);
    const Eigen::VectorXd r = (s.y - model(p, s.x)).matrix();
    const Eigen::Matrix3d JtJ = J.transpose() * J;
    const Eigen::Vector3d g = J.transpose() * r;
    bool accepted = false;
    Eigen::Vector3d step = Eigen::Vector3d::Zero();
    for (int tries = 0; tries < 40; ++tries) {
      Eigen::Matrix3d M = JtJ;
      M.diagonal() += mu * JtJ.diagonal().cwiseMax(1e-12);
      step = M.ldlt().solve(g);
      const Eigen::Vector3d trial = p + step;
      const double c2 = chi2_of(trial);
      if (std::isfinite(c2) && c2 <= chi2) {
        p = trial;
        const double gain = chi2 - c2;
        chi2 = c2;
        mu = std::max(mu / 3.0, 1e-15);
        accepted = true;
        if (gain <= 1e-15 * std::max(chi2, 1e-300)) out.converged = true;
        break;
      }
      mu *= 4.0;
    }
    const bool small_step = step.norm() <= 1e-12 * (1.0 + p.norm());
    if (!accepted || small_step || chi2 <= 1e-28) {
      // A rejected step at a stationary point still counts as convergence.
      out.converged = out.converged || small_step || chi2 <= 1e-28 || g.norm() <= 1e-14 * (1.0 + p.norm());
      break;
    }
    if (out.converged) break;
  }
  out.p = p;
  out.chi2 = chi2;
  out.iterations = it + 1;
  return out;
}

}  // namespace

double FitResult::operator()(double kappa) const { return a * std::pow(kappa, n) + q; }

std::vector<FitPoint> fit_window(const std::vector<FitPoint>& points, double kappa_star, const FitOptions& opt) {
  std::vector<FitPoint> out;
  for (const auto& p : points)
    if (p.kappa > opt.kappa_min && p.kappa <= kappa_star) out.push_back(p);
  return out;
}

FitResult fit_powerlaw(const std::vector<FitPoint>& points, double kappa_star, const FitOptions& opt) {
  const std::vector<FitPoint> pts = fit_window(points, kappa_star, opt);
  if (pts.size() < 4)
    throw DataError("power-law fit: need at least 4 points in (" + fmt17(opt.kappa_min) + ", " + fmt17(kappa_star) +
                    "], got " + std::to_string(pts.size()));
  for (const auto& p : pts)
    if (!std::isfinite(p.nu)) throw DataError("power-law fit: non-finite nu at kappa=" + fmt17(p.kappa));

  const Scaled s = rescale(pts);
  FitResult res;
  res.kappa_star = kappa_star;
  res.n_points = static_cast<int>(pts.size());

  const double y_mean = s.y.mean();
  if ((s.y - y_mean).abs().maxCoeff() <= 1e-13) {
    res.degenerate = true;
    res.converged = true;
    res.log_a = std::log(std::numeric_limits<double>::min());
    res.a = std::exp(res.log_a);
    res.n = 0.0;
    res.q = y_mean * s.scale;
    return res;
  }

  LmOutcome best;
  std::string trace;
  for (double n0 : opt.start_exponents) {
    // Linear least squares for the amplitude and offset at the trial exponent.
    Eigen::MatrixXd X(s.x.size(), 2);
    X.col(0) = s.x.pow(n0).matrix();
    X.col(1).setOnes();
    const Eigen::Vector2d lin = X.colPivHouseholderQr().solve(s.y.matrix());
    const double amp = lin[0] > 0.0 ? lin[0] : 1e-3 * (s.y.maxCoeff() - s.y.minCoeff() + 1e-12);
    const Eigen::Vector3d p0(std::log(amp), n0, lin[0] > 0.0 ? lin[1] : y_mean);
    const LmOutcome o = levenberg_marquardt(p0, s, opt.max_iter);
    trace += "start n=" + fmt17(n0) + ": chi2=" + fmt17(o.chi2) + (o.converged ? " converged; " : " not converged; ");
    if (o.converged && std::isfinite(o.chi2) && (!best.converged || o.chi2 < best.chi2)) best = o;
  }
  if (!best.converged) throw FitError("power-law fit did not converge from any start (" + trace + ")");

  const Eigen::Vector3d& p = best.p;
  res.n = p[1];
  res.log_a = p[0] - p[1] * std::log(s.kappa_ref) + std::log(s.scale);
  res.a = std::exp(res.log_a);
  res.q = p[2] * s.scale;
  res.chi2 = best.chi2 * s.scale * s.scale;
  res.iterations = best.iterations;
  res.converged = true;
  const double variation = std::exp(p[0]) * std::abs(s.x.pow(p[1]).maxCoeff() - s.x.pow(p[1]).minCoeff());
  res.degenerate = !(variation > 1e-10) || !std::isfinite(res.a);
  return res;
}

JackknifeResult jackknife(const std::vector<FitPoint>& points, double kappa_star, const JackknifeOptions& jk,
                          const FitOptions& opt) {
  if (!(jk.drop_fraction > 0.0 && jk.drop_fraction < 1.0))
    throw ConfigurationError("jackknife: drop fraction must lie in (0, 1)");
  if (jk.n_resamples < 2) throw ConfigurationError("jackknife: need at least 2 resamples");
  const std::vector<FitPoint> pts = fit_window(points, kappa_star, opt);
  const int m = static_cast<int>(pts.size());
  const int keep = static_cast<int>(std::ceil((1.0 - jk.drop_fraction) * m - 1e-9));
  if (keep < 4)
    throw ConfigurationError("jackknife: " + std::to_string(keep) + " of " + std::to_string(m) +
                             " points survive the drop; at least 4 are required");

  JackknifeResult out;
  out.full = fit_powerlaw(pts, kappa_star, opt);
  out.kept = keep;
  out.dropped = m - keep;
  out.n_est = out.full.n;
  out.q_est = out.full.q;
  out.log_a_est = out.full.log_a;
  if (out.dropped == 0) {
    out.resamples_used = jk.n_resamples;
    return out;
  }

  const auto B = static_cast<std::size_t>(jk.n_resamples);
  std::vector<Eigen::Vector3d> theta(B);
  std::vector<char> ok(B, 0);
  auto run = [&](std::size_t b) {
    std::seed_seq seq{static_cast<std::uint32_t>(jk.seed), static_cast<std::uint32_t>(jk.seed >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    std::mt19937_64 rng(seq);
    std::vector<int> idx(static_cast<std::size_t>(m));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < keep; ++i) {
      std::uniform_int_distribution<int> pick(i, m - 1);
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
    }
    std::vector<FitPoint> sub;
    for (int i = 0; i < keep; ++i) sub.push_back(pts[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
    try {
      const FitResult f = fit_powerlaw(sub, kappa_star, opt);
      theta[b] = Eigen::Vector3d(f.log_a, f.n, f.q);
      ok[b] = theta[b].allFinite();
    } catch (const Error&) {
    }
  };
  const int width = std::max(1, std::min<int>(jk.threads, jk.n_resamples));
  if (width == 1) {
    for (std::size_t b = 0; b < B; ++b) run(b);
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < width; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t b = static_cast<std::size_t>(t); b < B; b += static_cast<std::size_t>(width)) run(b);
      });
  }

  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  int used = 0;
  for (std::size_t b = 0; b < B; ++b)
    if (ok[b]) {
      mean += theta[b];
      ++used;
    }
  if (used < 2) throw FitError("jackknife: fewer than 2 subsample fits succeeded");
  mean /= used;
  Eigen::Vector3d ss = Eigen::Vector3d::Zero();
  for (std::size_t b = 0; b < B; ++b)
    if (ok[b]) ss += (theta[b] - mean).cwiseAbs2();
  const double r = static_cast<double>(keep) / static_cast<double>(out.dropped);
  const Eigen::Vector3d var = r / used * ss;
  const Eigen::Vector3d full(out.full.log_a, out.full.n, out.full.q);
  const Eigen::Vector3d corrected = full - r * (mean - full);
  out.log_a_est = corrected[0];
  out.n_est = corrected[1];
  out.q_est = corrected[2];
  out.sigma_log_a = std::sqrt(var[0]);
  out.sigma_n = std::sqrt(var[1]);
  out.sigma_q = std::sqrt(var[2]);
  out.resamples_used = used;
  out.full.sigma_n = out.sigma_n;
  out.full.sigma_q = out.sigma_q;
  return out;
}

std::vector<ScanEntry> stability_scan(const std::vector<FitPoint>& points, const std::vector<double>& kappa_star_list,
                                      const JackknifeOptions& jk, const FitOptions& opt) {
  std::vector<ScanEntry> out;
  const ScanEntry* prev = nullptr;
  for (double ks : kappa_star_list) {
    ScanEntry e;
    e.kappa_star = ks;
    try {
      e.result = jackknife(points, ks, jk, opt);
      e.ok = true;
    } catch (const Error& err) {
      e.error = err.what();
    }
    out.push_back(std::move(e));
    ScanEntry& cur = out.back();
    if (cur.ok && prev) {
      const double s = std::max(cur.result.sigma_n, prev->result.sigma_n);
      cur.n_drift = std::abs(cur.result.n_est - prev->result.n_est) > 2.0 * s;
    }
    if (cur.ok) prev = &cur;
  }
  return out;
}

std::vector<double> default_kappa_star_list() { return {0.0016, 0.002, 0.003, 0.004, 0.005}; }

RegimeEstimate summarize_scan(const std::vector<ScanEntry>& scan) {
  RegimeEstimate est;
  const ScanEntry* first = nullptr;
  double n_lo = 0, n_hi = 0, q_lo = 0, q_hi = 0;
  for (const auto& e : scan) {
    if (!e.ok) continue;
    if (first && e.n_drift) break;
    if (!first) {
      first = &e;
      n_lo = n_hi = e.result.n_est;
      q_lo = q_hi = e.result.q_est;
    }
    n_lo = std::min(n_lo, e.result.n_est);
    n_hi = std::max(n_hi, e.result.n_est);
    q_lo = std::min(q_lo, e.result.q_est);
    q_hi = std::max(q_hi, e.result.q_est);
  }
  if (!first) return est;
  est.ok = true;
  est.kappa_star = first->kappa_star;
  est.n = first->result.n_est;
  est.q = first->result.q_est;
  est.spread_n = 0.5 * (n_hi - n_lo);
  est.spread_q = 0.5 * (q_hi - q_lo);
  est.sigma_n = std::hypot(first->result.sigma_n, est.spread_n);
  est.sigma_q = std::hypot(first->result.sigma_q, est.spread_q);
  return est;
}

void write_fit_csv_row(std::ostream& os, double c, const ScanEntry& e) {
  const auto& r = e.result;
  if (!e.ok) {
    os << fmt17(c) << ',' << fmt17(e.kappa_star) << ",nan,nan,nan,nan,nan,nan,0\n";
    return;
  }
  os << fmt17(c) << ',' << fmt17(e.kappa_star) << ',' << fmt17(std::exp(r.log_a_est)) << ',' << fmt17(r.n_est) << ','
     << fmt17(r.q_est) << ',' << fmt17(r.sigma_n) << ',' << fmt17(r.sigma_q) << ',' << fmt17(r.full.chi2) << ','
     << (r.full.converged ? 1 : 0) << '\n';
}

}  // namespace patchdiff
