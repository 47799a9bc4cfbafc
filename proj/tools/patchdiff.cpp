#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "patchdiff/cell_solver.hpp"
#include "patchdiff/cli_io.hpp"
#include "patchdiff/fd_assembly.hpp"
#include "patchdiff/numfmt.hpp"
#include "patchdiff/powerlaw_fit.hpp"
#include "patchdiff/spde_sim.hpp"
#include "patchdiff/sweep.hpp"
#include "patchdiff/verification.hpp"

using namespace patchdiff;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitVerification = 3;

constexpr const char* kVersion = "1.0.0";

using Clock = std::chrono::steady_clock;

struct Invocation {
  std::map<std::string, std::string> flags;
  std::string config_file;
};

void bind(CLI::App* app, Invocation& inv, const std::string& flag, const std::string& key, const std::string& help) {
  app->add_option_function<std::string>(
      flag, [&inv, key](const std::string& v) { inv.flags[key] = v; }, help + " [" + key + "]");
}

void bind_list(CLI::App* app, Invocation& inv, const std::string& flag, const std::string& key,
               const std::string& help) {
  app->add_option_function<std::vector<std::string>>(
         flag,
         [&inv, key](const std::vector<std::string>& v) {
           std::string joined;
           for (const auto& s : v) joined += (joined.empty() ? "" : ",") + s;
           inv.flags[key] = joined;
         },
         help + " [" + key + "]")
      ->delimiter(',');
}

void bind_switch(CLI::App* app, Invocation& inv, const std::string& flag, const std::string& key,
                 const std::string& value, const std::string& help) {
  app->add_flag_callback(flag, [&inv, key, value] { inv.flags[key] = value; }, help + " [" + key + "]");
}

void bind_common(CLI::App* app, Invocation& inv, bool config_flag = true) {
  if (config_flag) app->add_option("--config", inv.config_file, "key = value config file with [sections]");
  bind(app, inv, "--output,-o", "run.output", "output directory");
  bind_switch(app, inv, "--overwrite", "run.overwrite", "true", "replace results in an existing output directory");
  bind(app, inv, "--threads", "run.threads", "worker threads (0: all hardware threads)");
}

RunConfig load(Subcommand sub, const Invocation& inv) {
  if (inv.config_file.empty()) return parse_config(sub, "", inv.flags);
  return parse_config_file(sub, inv.config_file, inv.flags);
}

json versions() {
  return {{"patchdiff", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"compiler", __VERSION__}};
}

double elapsed(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void report_written(const std::vector<std::filesystem::path>& paths) {
  for (const auto& p : paths) std::cout << "wrote " << p.string() << '\n';
}

std::string record_row(const DiffusivityRecord& r) {
  std::ostringstream os;
  write_record_csv_row(os, r);
  return os.str();
}

int run_solve(const RunConfig& cfg) {
  const auto t0 = Clock::now();
  const PatchParams params = cfg.patch_params();
  const double kappa = cfg.real("solve.kappa");
  const int n = cfg.integer("grid.n");
  const SolverOptions solver = cfg.solver_options();
  CellProblem problem(Grid2D(n), params, solver);
  const DiffusivityRecord rec = problem.solve(kappa);
  const double wall = elapsed(t0);

  std::cout << "c = " << fmt17(rec.c) << ", kappa = " << fmt17(rec.kappa) << ", n = " << n << '\n'
            << "Hbar = [[" << fmt17(rec.Hbar(0, 0)) << ", " << fmt17(rec.Hbar(0, 1)) << "], ["
            << fmt17(rec.Hbar(1, 0)) << ", " << fmt17(rec.Hbar(1, 1)) << "]]\n"
            << "C_flux = " << fmt17(rec.C_flux) << ", C_var = " << fmt17(rec.C_var())
            << ", nu = " << fmt17(rec.C_flux - rec.kappa) << '\n'
            << "eigenvalues " << fmt17(rec.eig_lo) << ", " << fmt17(rec.eig_hi)
            << "; offdiag_ratio " << fmt17(rec.offdiag_ratio) << "; flux/variational gap "
            << fmt17(rec.crosscheck_gap()) << '\n'
            << "CG iterations " << rec.cg_iters << ", residual " << fmt17(rec.residual) << ", " << wall << " s\n";

  json meta = {{"parameters",
                {{"c", params.c}, {"a1", params.a1}, {"a2", params.a2}, {"lambda", params.lambda},
                 {"norm", params.norm}, {"kappa", kappa}, {"n", n}, {"d", 1.0 / n}}},
               {"solver", {{"tol", solver.tol}, {"max_iter", solver.max_iter},
                           {"preconditioner", cfg.text("solver.preconditioner")}}},
               {"seed", cfg.integer("run.seed")},
               {"versions", versions()},
               {"wall_seconds", wall}};
  if (rec.offdiag_ratio > solver.diag_tol) std::cout << "warning: off-diagonal ratio above diag_tol\n";
  if (rec.crosscheck_gap() > solver.crosscheck_tol) std::cout << "warning: flux/variational gap above crosscheck_tol\n";

  std::vector<OutputFile> files = {{"record.csv", std::string(kRecordCsvHeader) + "\n" + record_row(rec)},
                                   {"record.json", meta.dump(2) + "\n"}};
  report_written(emit_outputs(cfg, files, cfg.text("run.output"), cfg.boolean("run.overwrite"),
                              json{{"wall_seconds", wall}, {"versions", versions()}}.dump()));
  return kExitOk;
}

int run_sweep(const RunConfig& cfg) {
  const SweepPlan plan = cfg.sweep_plan();
  std::cerr << "sweep: " << plan.c_list.size() << " c values x " << plan.kappa_list.size() << " kappa values x "
            << plan.d_list.size() << " grids\n";
  const SweepResult result = run_sweep(plan, [](double c, std::size_t done, std::size_t total) {
    std::cerr << "  c = " << c << " done (" << done << "/" << total << ")\n";
  });
  std::ostringstream sweep_csv, records_csv;
  write_sweep_csv(sweep_csv, result.points);
  write_sweep_records_csv(records_csv, result.points);
  std::vector<OutputFile> files = {{"sweep.csv", sweep_csv.str()}, {"records.csv", records_csv.str()}};
  for (auto& f : plot_additional_diffusivity(result.points)) files.push_back(std::move(f));

  json failures = json::array();
  for (const auto& f : result.failures) failures.push_back({{"c", f.c}, {"kappa", f.kappa}, {"error", f.message}});
  const json extra = {{"wall_seconds", result.wall_seconds},
                      {"points", result.points.size()},
                      {"failures", failures},
                      {"hardware_threads", std::thread::hardware_concurrency()},
                      {"versions", versions()}};
  report_written(emit_outputs(cfg, files, cfg.text("run.output"), cfg.boolean("run.overwrite"), extra.dump()));
  std::cout << result.points.size() << " points, " << result.failures.size() << " failures, "
            << result.wall_seconds << " s\n";
  return result.failures.empty() ? kExitOk : kExitNumerical;
}

int run_fit(const RunConfig& cfg) {
  std::istringstream in(read_text_file(cfg.text("fit.input")));
  const std::vector<ExtrapolatedPoint> points = read_sweep_csv(in);
  if (points.empty()) throw DataError("fit: no rows in " + cfg.text("fit.input"));
  const RegimeSignatures sig =
      check_regime_signatures(points, cfg.reals("fit.kappa_star"), cfg.jackknife_options(), cfg.fit_options());

  std::ostringstream fits;
  fits << kFitCsvHeader << ",error\n";
  std::string regime = "c,kappa_star,n,sigma_n,q,sigma_q,spread_n,spread_q,ok\n";
  for (std::size_t i = 0; i < sig.rows.size(); ++i) {
    const double c = sig.rows[i].c;
    for (const auto& e : sig.scans[i]) {
      std::ostringstream row;
      write_fit_csv_row(row, c, e);
      std::string line = row.str();
      if (!line.empty() && line.back() == '\n') line.pop_back();
      std::string err = e.error;
      std::replace(err.begin(), err.end(), ',', ';');
      std::replace(err.begin(), err.end(), '\n', ' ');
      fits << line << ',' << err << '\n';
    }
    const RegimeEstimate& r = sig.rows[i].estimate;
    regime += fmt17(c) + ',' + fmt17(r.kappa_star) + ',' + fmt17(r.n) + ',' + fmt17(r.sigma_n) + ',' + fmt17(r.q) +
              ',' + fmt17(r.sigma_q) + ',' + fmt17(r.spread_n) + ',' + fmt17(r.spread_q) + ',' +
              (r.ok ? "1" : "0") + '\n';
    std::cout << "c = " << c << ": n = " << r.n << " +- " << r.sigma_n << ", q = " << r.q << " +- " << r.sigma_q
              << (r.ok ? "" : " (no successful window)") << '\n';
  }
  std::vector<OutputFile> files = {{"fits.csv", fits.str()}, {"regime.csv", regime}};
  for (auto& f : plot_regime(sig.rows)) files.push_back(std::move(f));
  const json extra = {{"input", cfg.text("fit.input")},
                      {"input_sha256", sha256_hex(read_text_file(cfg.text("fit.input")))},
                      {"signatures", {{"passed", sig.check.passed}, {"detail", sig.check.detail}}},
                      {"versions", versions()}};
  report_written(emit_outputs(cfg, files, cfg.text("run.output"), cfg.boolean("run.overwrite"), extra.dump()));
  std::cout << format_check(sig.check) << '\n';
  return kExitOk;
}

int run_simulate(const RunConfig& cfg) {
  const auto t0 = Clock::now();
  const PatchParams params = cfg.patch_params();
  const double kappa = cfg.real("simulate.kappa");
  const Grid2D grid(cfg.integer("simulate.n"));
  const bool compare = cfg.boolean("simulate.compare");

  double C_eff = 0.0;
  if (compare || cfg.real("simulate.T_end") == 0.0) {
    C_eff = extrapolated_points({params.c}, kappa, cfg.reals("grid.d_list"), cfg.solver_options()).front().C_extrap;
    std::cout << "C_eff = " << fmt17(C_eff) << '\n';
  }
  const double T_end =
      cfg.real("simulate.T_end") > 0.0 ? cfg.real("simulate.T_end") : 1.0 / (4.0 * std::numbers::pi * std::numbers::pi * C_eff);

  NoiseConfig nc;
  nc.N = cfg.integer("simulate.N");
  nc.seed = static_cast<std::uint64_t>(cfg.integer("run.seed"));
  nc.dt = cfg.real("simulate.dt");
  nc.paths = cfg.integer("simulate.paths");
  nc.threads = cfg.threads();
  nc.samples = cfg.integer("simulate.samples");
  const PatchFamily family = build_patch_vectors(nc.N, grid, params);
  for (const auto& w : family.warnings) std::cerr << "warning: " << w << '\n';

  const std::vector<TrigTerm> u0_terms = {{1, 0, 1.0, 0.0}};
  const ScalarField2D u0 = sample_trig(grid, u0_terms);
  const Ensemble e = simulate(u0, T_end, nc, family, kappa, {u0});
  std::ostringstream ens;
  write_ensemble_csv(ens, e);
  std::vector<OutputFile> files = {{"ensemble.csv", ens.str()}};
  json extra = {{"seed", nc.seed},   {"N", nc.N},         {"dt", e.dt},          {"paths", nc.paths},
                {"c", params.c},     {"kappa", kappa},    {"n", grid.n()},       {"T_end", T_end},
                {"warnings", family.warnings}, {"versions", versions()}};
  if (compare) {
    const ErrorCurve err = compare_homogenized(e, {params.c, kappa, C_eff}, u0_terms, u0);
    std::string csv = "time,mse\n";
    for (std::size_t i = 0; i < err.times.size(); ++i) csv += fmt17(err.times[i]) + ',' + fmt17(err.mse[i]) + '\n';
    files.push_back({"error.csv", csv});
    extra["C_eff"] = C_eff;
    extra["sup_error"] = err.sup;
    std::cout << "sup over t of E|<u_t - ubar_t, phi>|^2 = " << fmt17(err.sup) << '\n';
  }
  extra["wall_seconds"] = elapsed(t0);
  std::cout << "N = " << nc.N << ", dt = " << e.dt << ", " << nc.paths << " paths, " << e.wall_seconds
            << " s simulating\n";
  report_written(emit_outputs(cfg, files, cfg.text("run.output"), cfg.boolean("run.overwrite"), extra.dump()));
  return kExitOk;
}

template <class F>
CheckResult timed(F&& f) {
  const auto t0 = Clock::now();
  CheckResult r = f();
  r.seconds = elapsed(t0);
  return r;
}

int run_verify(const RunConfig& cfg) {
  const bool fast = cfg.boolean("verify.fast");
  const std::vector<double> d_list = fast ? std::vector<double>{0.01, 0.005} : default_d_list();
  std::vector<CheckResult> results;
  auto record = [&](CheckResult r) {
    std::cout << format_check(r) << std::endl;
    results.push_back(std::move(r));
  };
  record(timed([&] { return check_isometries(fast ? 64 : 128); }));
  record(timed([&] { return check_cone_lemma(fast ? 64 : 128, fast ? 180 : 360); }));
  record(timed([&] { return check_operator_properties(); }));
  record(timed([&] { return check_spde_identities(fast ? 64 : 128, {2, 4, 8}, fast ? 10 : 100); }));
  record(timed([&] {
    const auto pts = extrapolated_points({0.4, 1.0, 1.4}, 1e-3, d_list, cfg.solver_options());
    CheckResult a = check_diagonality(pts);
    const CheckResult b = check_flux_variational(pts);
    a.name = "diagonality and flux/variational agreement";
    a.passed = a.passed && b.passed;
    a.detail += " | " + b.detail;
    return a;
  }));
  record(timed([&] {
    const std::vector<double> kappas = fast ? std::vector<double>{1e-4, 1e-3, 1e-2} : default_kappa_list(8);
    std::vector<ExtrapolatedPoint> pts;
    for (double k : kappas)
      for (auto& p : extrapolated_points({0.25, 0.4}, k, d_list, cfg.solver_options())) pts.push_back(std::move(p));
    CheckResult r = check_upper_bounds(pts);
    const CheckResult lb = check_lower_bound(pts, 0.0);
    r.passed = r.passed && lb.passed;
    r.detail += " | " + lb.detail;
    return r;
  }));
  record(timed([&] { return check_fit_machinery(fast ? 20 : 100, fast ? 50 : 200); }));

  std::size_t failed = 0;
  for (const auto& r : results) failed += r.passed ? 0 : 1;
  std::cout << (results.size() - failed) << "/" << results.size() << " property suites passed\n";
  return failed == 0 ? kExitOk : kExitVerification;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Effective diffusivity of vortex-patch transport noise: cell problems, sweeps, fits, SPDE runs"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Invocation inv;
  CLI::App* solve = app.add_subcommand("solve", "solve the cell problems for one (c, kappa, n)");
  bind(solve, inv, "--c", "patch.c", "patch radius");
  bind(solve, inv, "--kappa", "solve.kappa", "molecular diffusivity");
  bind(solve, inv, "--n", "grid.n", "nodes per side");
  bind(solve, inv, "--a1", "patch.a1", "inner decay");
  bind(solve, inv, "--a2", "patch.a2", "edge decay");
  bind(solve, inv, "--lambda", "patch.lambda", "amplitude");
  bind(solve, inv, "--tol", "solver.tol", "relative residual tolerance");
  bind(solve, inv, "--preconditioner", "solver.preconditioner", "none, jacobi or cholesky");
  bind_common(solve, inv);

  CLI::App* sweep = app.add_subcommand("sweep", "run a (c, kappa, d) sweep with d -> 0 extrapolation");
  sweep->add_option("--plan", inv.config_file, "plan file (same format as --config)");
  bind_list(sweep, inv, "--c-list", "sweep.c_list", "radii");
  bind_list(sweep, inv, "--kappa-list", "sweep.kappa_list", "kappa values");
  bind_list(sweep, inv, "--d-list", "grid.d_list", "grid steps");
  bind_common(sweep, inv, false);

  CLI::App* fit = app.add_subcommand("fit", "fit nu = a kappa^n + q per c with jackknife errors");
  bind(fit, inv, "--input", "fit.input", "sweep CSV");
  bind_list(fit, inv, "--kappa-star", "fit.kappa_star", "fit window upper ends");
  bind(fit, inv, "--drop", "fit.drop", "jackknife drop fraction");
  bind(fit, inv, "--resamples", "fit.resamples", "jackknife subsamples");
  bind(fit, inv, "--seed", "run.seed", "master seed");
  bind_common(fit, inv);

  CLI::App* sim = app.add_subcommand("simulate", "Monte Carlo runs of the stochastic transport equation");
  bind(sim, inv, "--c", "patch.c", "patch radius");
  bind(sim, inv, "--kappa", "simulate.kappa", "molecular diffusivity");
  bind(sim, inv, "--N", "simulate.N", "patch lattice resolution");
  bind(sim, inv, "--n", "simulate.n", "nodes per side");
  bind(sim, inv, "--paths", "simulate.paths", "Monte Carlo paths");
  bind(sim, inv, "--dt", "simulate.dt", "time step (0: largest stable)");
  bind(sim, inv, "--T-end", "simulate.T_end", "final time (0: one e-fold decay at C_eff)");
  bind(sim, inv, "--seed", "run.seed", "master seed");
  bind_switch(sim, inv, "--no-compare", "simulate.compare", "false", "skip the homogenized comparison");
  bind_common(sim, inv);

  CLI::App* verify = app.add_subcommand("verify", "run the property suites");
  bind_switch(verify, inv, "--fast", "verify.fast", "true", "smaller grids and fewer trials");
  verify->add_option("--config", inv.config_file, "key = value config file with [sections]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (solve->parsed()) return run_solve(load(Subcommand::Solve, inv));
    if (sweep->parsed()) return run_sweep(load(Subcommand::Sweep, inv));
    if (fit->parsed()) return run_fit(load(Subcommand::Fit, inv));
    if (sim->parsed()) return run_simulate(load(Subcommand::Simulate, inv));
    if (verify->parsed()) return run_verify(load(Subcommand::Verify, inv));
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigurationError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const VerificationError& e) {
    std::cerr << "verification failed: " << e.what() << '\n';
    return kExitVerification;
  } catch (const Error& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  }
  return kExitUsage;
}
