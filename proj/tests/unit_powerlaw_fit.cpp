#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "patchdiff/errors.hpp"
#include "patchdiff/powerlaw_fit.hpp"

using namespace patchdiff;

namespace {

std::vector<FitPoint> model_points(double a, double n, double q, int m, double lo, double hi) {
  std::vector<FitPoint> pts;
  for (int i = 0; i < m; ++i) {
    const double k = lo * std::pow(hi / lo, double(i) / (m - 1));
    pts.push_back({k, a * std::pow(k, n) + q});
  }
  return pts;
}

}  // namespace

TEST_CASE("fit_window bounds") {
  const std::vector<FitPoint> pts{{1e-4, 1}, {2e-4, 1}, {1e-3, 1}, {2e-3, 1}};
  FitOptions opt;
  const auto w = fit_window(pts, 1e-3, opt);
  REQUIRE(w.size() == 2);
  CHECK(w.front().kappa == 2e-4);
  CHECK(w.back().kappa == 1e-3);
  opt.kappa_min = 0.0;
  CHECK(fit_window(pts, 1e-3, opt).size() == 3);
}

TEST_CASE("exact recovery of 2 kappa^0.7 + 0.1") {
  FitOptions opt;
  opt.kappa_min = 0.0;
  const auto pts = model_points(2.0, 0.7, 0.1, 20, 1e-4, 1e-2);
  const auto f = fit_powerlaw(pts, 1.01e-2, opt);
  CHECK(f.converged);
  CHECK(f.a == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(f.n == doctest::Approx(0.7).epsilon(1e-6));
  CHECK(std::abs(f.q - 0.1) <= 1e-6);
  CHECK(f.n_points == 20);
  CHECK(f(1e-3) == doctest::Approx(2.0 * std::pow(1e-3, 0.7) + 0.1).epsilon(1e-9));
}

TEST_CASE("pure power law and pure constant") {
  FitOptions opt;
  opt.kappa_min = 0.0;
  SUBCASE("q = 0") {
    const auto f = fit_powerlaw(model_points(0.5, 1.0, 0.0, 30, 1e-4, 5e-3), 5.1e-3, opt);
    CHECK(f.n == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(std::abs(f.q) <= 1e-9);
  }
  SUBCASE("constant data is flagged degenerate and q absorbs the level") {
    std::vector<FitPoint> pts;
    for (int i = 0; i < 20; ++i) pts.push_back({1e-4 * (i + 1), 0.3});
    const auto f = fit_powerlaw(pts, 1.0, opt);
    CHECK(f.degenerate);
    CHECK(f(1e-3) == doctest::Approx(0.3).epsilon(1e-8));
  }
}

TEST_CASE("too few points is a data error") {
  const auto pts = model_points(1.0, 1.0, 0.0, 2, 2e-4, 1e-3);
  CHECK_THROWS_AS(fit_powerlaw(pts, 1e-3), DataError);
}

TEST_CASE("jackknife") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> noise(0.0, 1e-4);
  auto pts = model_points(2.0, 0.7, 0.1, 200, 1e-4, 5e-3);
  for (auto& p : pts) p.nu += noise(rng);
  FitOptions opt;
  opt.kappa_min = 0.0;
  JackknifeOptions jk;
  jk.n_resamples = 100;
  const auto r = jackknife(pts, 5.1e-3, jk, opt);
  CHECK(r.kept == 10);
  CHECK(r.dropped == 190);
  CHECK(r.resamples_used >= 95);
  CHECK(r.sigma_n > 0.0);
  CHECK(std::abs(r.n_est - 0.7) <= 5 * r.sigma_n);
  SUBCASE("deterministic under a fixed seed") {
    const auto again = jackknife(pts, 5.1e-3, jk, opt);
    CHECK(again.n_est == r.n_est);
    CHECK(again.sigma_q == r.sigma_q);
  }
  SUBCASE("threading does not change the result") {
    JackknifeOptions jt = jk;
    jt.threads = 3;
    const auto t = jackknife(pts, 5.1e-3, jt, opt);
    CHECK(t.n_est == r.n_est);
    CHECK(t.sigma_n == r.sigma_n);
  }
}

TEST_CASE("stability scan and its summary") {
  auto pts = model_points(1.5, 0.9, 0.02, 120, 1e-4, 5e-3);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> noise(0.0, 1e-6);
  for (auto& p : pts) p.nu += noise(rng);
  JackknifeOptions jk;
  jk.n_resamples = 50;
  const auto scan = stability_scan(pts, default_kappa_star_list(), jk);
  REQUIRE(scan.size() == default_kappa_star_list().size());
  for (const auto& e : scan) CHECK(e.ok);
  const auto est = summarize_scan(scan);
  CHECK(est.ok);
  CHECK(est.kappa_star == doctest::Approx(0.0016));
  CHECK(est.n == doctest::Approx(0.9).epsilon(1e-2));
  CHECK(est.sigma_n >= est.spread_n / 2 - 1e-15);

  std::ostringstream os;
  write_fit_csv_row(os, 0.3, scan.front());
  CHECK(os.str().rfind("0.29999999999999999,0.0016", 0) == 0);
}

TEST_CASE("a failed window is recorded in the scan") {
  const auto pts = model_points(1.0, 1.0, 0.0, 100, 2e-4, 4e-3);
  const auto scan = stability_scan(pts, {1.5e-4, 5e-3});
  REQUIRE(scan.size() == 2);
  CHECK_FALSE(scan[0].ok);
  CHECK_FALSE(scan[0].error.empty());
  CHECK(scan[1].ok);
  CHECK(summarize_scan(scan).kappa_star == 5e-3);
}
