#include <cmath>
#include <sstream>

#include "doctest.h"
#include "patchdiff/sweep.hpp"

using namespace patchdiff;

TEST_CASE("default lists") {
  const auto c = default_c_list();
  REQUIRE(c.size() == 18);
  CHECK(c.front() == doctest::Approx(0.2));
  CHECK(c.back() == doctest::Approx(1.9));
  const auto k = default_kappa_list();
  CHECK(k.front() == doctest::Approx(1e-4));
  CHECK(k.back() == doctest::Approx(1e-2));
  for (std::size_t i = 1; i < k.size(); ++i) CHECK(k[i] > k[i - 1]);
  // At least 50 values per decade below 5e-3.
  std::size_t dense = 0;
  for (double v : k) dense += v <= 5e-3 * (1 + 1e-12);
  CHECK(double(dense - 1) / std::log10(50.0) >= 50.0);
  CHECK_THROWS_AS(default_kappa_list(1), ConfigurationError);
  CHECK(default_d_list() == std::vector<double>{0.01, 0.005, 0.0025});
}

TEST_CASE("grid_for_step rounds 1/d") {
  CHECK(grid_for_step(0.01).n() == 100);
  CHECK(grid_for_step(0.00222).n() == 450);
  CHECK(grid_for_step(0.00167).n() == 599);
  CHECK_THROWS_AS(grid_for_step(0.5), ConfigurationError);
  CHECK_THROWS_AS(grid_for_step(-0.1), ConfigurationError);
}

TEST_CASE("fit_d2 recovers an exact quadratic model") {
  const std::vector<double> d{0.01, 0.005, 0.0025};
  std::vector<double> y;
  for (double h : d) y.push_back(0.37 - 12.0 * h * h);
  const auto f = fit_d2(d, y);
  CHECK(f.C0 == doctest::Approx(0.37).epsilon(1e-13));
  CHECK(f.slope == doctest::Approx(-12.0).epsilon(1e-9));
  CHECK(f.residual <= 1e-15);
  CHECK(fit_d2({0.01}, {0.2}).C0 == 0.2);
  CHECK_THROWS_AS(fit_d2({0.01, 0.01}, {0.2, 0.3}), DataError);
  CHECK_THROWS_AS(fit_d2({}, {}), DataError);
}

TEST_CASE("extrapolate_d works entrywise and applies the eigenvalue rule") {
  std::vector<DiffusivityRecord> recs;
  for (double d : {0.01, 0.005, 0.0025}) {
    DiffusivityRecord r;
    r.c = 0.7;
    r.kappa = 1e-3;
    r.d = d;
    r.Hbar << 0.05 + d * d, 2e-5 * d * d / 1e-4, 2e-5 * d * d / 1e-4, 0.05 + 3 * d * d;
    r.C_flux = 0.05 + 2 * d * d;
    r.C_var_e1 = r.C_var_e2 = 0.05 + 2 * d * d;
    recs.push_back(r);
  }
  const auto p = extrapolate_d(recs);
  CHECK(p.Hbar_extrap(0, 0) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(std::abs(p.Hbar_extrap(0, 1)) <= 1e-15);
  CHECK(p.C_extrap == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(p.C_var_extrap == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(p.slope == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(p.nu() == doctest::Approx(0.049).epsilon(1e-11));

  // Anisotropic limit: the larger eigenvalue is reported.
  for (auto& r : recs) r.Hbar(1, 1) += 0.01;
  CHECK(extrapolate_d(recs).C_extrap == doctest::Approx(0.06).epsilon(1e-12));
  CHECK_THROWS_AS(extrapolate_d({}), DataError);
}

TEST_CASE("run_point and a tiny sweep") {
  SweepPlan plan;
  plan.c_list = {0.4, 1.0};
  plan.kappa_list = {1e-3, 1e-2};
  plan.d_list = {1.0 / 40, 1.0 / 80};
  const auto res = run_sweep(plan);
  REQUIRE(res.failures.empty());
  REQUIRE(res.points.size() == 4);
  CHECK(res.points[0].c == 0.4);
  CHECK(res.points[0].kappa == 1e-3);
  CHECK(res.points[3].c == 1.0);
  for (const auto& p : res.points) {
    CHECK(p.records.size() == 2);
    CHECK(p.C_extrap >= p.kappa);
  }
  // The sweep result equals independent single-point solves.
  const auto p = make_patch_params(1.0);
  const auto r40 = run_point(1.0, 1e-2, 1.0 / 40, p);
  CHECK(r40.C_flux == res.points[3].records[0].C_flux);

  std::ostringstream os;
  write_sweep_csv(os, res.points);
  std::istringstream is(os.str());
  const auto back = read_sweep_csv(is);
  REQUIRE(back.size() == 4);
  CHECK(back[2].C_extrap == res.points[2].C_extrap);
  CHECK(back[2].C_var_extrap == res.points[2].C_var_extrap);

  std::ostringstream rec;
  write_sweep_records_csv(rec, res.points);
  CHECK(rec.str().rfind(kRecordCsvHeader, 0) == 0);
}

TEST_CASE("plan validation") {
  SweepPlan plan = default_plan();
  CHECK_NOTHROW(plan.validate());
  plan.d_list = {0.005, 0.01};
  CHECK_THROWS(plan.validate());
  plan = default_plan();
  plan.kappa_list = {-1.0};
  CHECK_THROWS(plan.validate());
  plan = default_plan();
  plan.c_list.clear();
  CHECK_THROWS(plan.validate());
}

TEST_CASE("failed points are reported, not dropped silently") {
  SweepPlan plan;
  plan.c_list = {0.01, 1.0};
  plan.kappa_list = {1e-3};
  plan.d_list = {1.0 / 40};
  const auto res = run_sweep(plan);
  REQUIRE(res.points.size() == 1);
  CHECK(res.points[0].c == 1.0);
  REQUIRE(res.failures.size() == 1);
  CHECK(res.failures[0].c == 0.01);
  CHECK(res.failures[0].message.find("vanishes") != std::string::npos);

  plan.c_list = {1.0};
  plan.solver.max_iter = 1;
  plan.solver.preconditioner = PreconditionerKind::None;
  CHECK_THROWS_AS(run_sweep(plan), SolverError);
}
