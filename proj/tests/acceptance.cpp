// Acceptance criteria 1-11, one PASS/FAIL line each. Exit status is nonzero when any selected criterion fails.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "patchdiff/verification.hpp"

using namespace patchdiff;
namespace fs = std::filesystem;

namespace {

struct SweepData {
  std::vector<ExtrapolatedPoint> points;
  double wall_seconds = 0.0;
  int hardware_threads = 0;
};

SweepData load_sweep(const fs::path& dir) {
  SweepData out;
  std::ifstream csv(dir / "sweep.csv");
  if (!csv) throw IoError("no sweep.csv in " + dir.string() + "; run the sweep fixture first");
  out.points = read_sweep_csv(csv);
  const auto manifest = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
  out.wall_seconds = manifest.at("run").at("wall_seconds").get<double>();
  out.hardware_threads = manifest.at("run").value("hardware_threads", 0);
  return out;
}

CheckResult labelled(CheckResult r, int k) {
  r.name = "criterion " + std::to_string(k) + " " + r.name;
  return r;
}

const std::vector<double> kThreePoints = {0.4, 1.0, 1.4};

CheckResult run_criterion(int k, const fs::path& sweep_dir, std::uint64_t seed) {
  switch (k) {
    case 1: {
      const auto s = load_sweep(sweep_dir);
      auto r = check_lower_bound(s.points, s.wall_seconds);
      r.detail += "; sweep on " + std::to_string(s.hardware_threads) + " hardware thread(s)";
      return r;
    }
    case 2: {
      auto r = check_diagonality(extrapolated_points(kThreePoints, 1e-3, literal_d_list()));
      r.detail += "; grids n = 100, 450, 599, 800";
      return r;
    }
    case 3: {
      auto r = check_flux_variational(extrapolated_points(kThreePoints, 1e-3, literal_d_list()));
      r.detail += "; grids n = 100, 450, 599, 800";
      return r;
    }
    case 4: {
      SweepPlan plan = default_plan();
      plan.c_list = {0.25, 0.4};
      const auto res = run_sweep(plan);
      auto r = check_upper_bounds(res.points);
      if (!res.failures.empty()) {
        r.passed = false;
        r.detail += "; " + std::to_string(res.failures.size()) + " points failed to solve";
      }
      return r;
    }
    case 5:
      return check_regime_signatures(load_sweep(sweep_dir).points).check;
    case 6:
      return check_cone_lemma();
    case 7:
      return check_isometries();
    case 8:
      return check_operator_properties();
    case 9:
      return check_spde_identities(128, {2, 4, 8}, 100, seed);
    case 10: {
      TrendOptions opt;
      opt.seed = seed;
      opt.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
      return check_scaling_trend(opt).check;
    }
    case 11:
      return check_fit_machinery(100, 200, seed);
    default:
      throw UsageError("criterion must lie in 1..11");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> criteria;
  std::string sweep_dir = "acceptance/sweep";
  std::uint64_t seed = 1;
  app.add_option("--criterion", criteria, "Criteria to run (default: all)")->check(CLI::Range(1, 11));
  app.add_option("--sweep-dir", sweep_dir, "Output directory of the default sweep");
  app.add_option("--seed", seed, "Seed for the stochastic checks");
  CLI11_PARSE(app, argc, argv);
  if (criteria.empty())
    for (int k = 1; k <= 11; ++k) criteria.push_back(k);

  int failures = 0;
  for (int k : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    CheckResult r;
    try {
      r = run_criterion(k, sweep_dir, seed);
    } catch (const std::exception& e) {
      r.name = "error";
      r.passed = false;
      r.detail = e.what();
    }
    if (r.seconds == 0.0) r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << format_check(labelled(r, k)) << std::endl;
    failures += !r.passed;
  }
  return failures == 0 ? 0 : 1;
}
