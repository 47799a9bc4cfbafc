#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "patchdiff/cli_io.hpp"

using namespace patchdiff;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("patchdiff_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string usage_message(Subcommand sub, const std::string& text, const std::map<std::string, std::string>& flags = {}) {
  try {
    parse_config(sub, text, flags);
  } catch (const UsageError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("subcommand names") {
  for (auto s : {Subcommand::Solve, Subcommand::Sweep, Subcommand::Fit, Subcommand::Simulate, Subcommand::Verify})
    CHECK(parse_subcommand(subcommand_name(s)) == s);
  CHECK_THROWS_AS(parse_subcommand("plot"), UsageError);
}

TEST_CASE("configuration parsing") {
  SUBCASE("defaults and typed access") {
    const auto cfg = parse_config(Subcommand::Solve, "[patch]\nc = 1.2\n[solve]\nkappa = 0.01\n", {});
    CHECK(cfg.real("patch.c") == 1.2);
    CHECK(cfg.real("patch.a1") == 0.05);
    CHECK(cfg.integer("grid.n") == 200);
    CHECK(cfg.reals("grid.d_list") == std::vector<double>{0.01, 0.005, 0.0025});
    CHECK(cfg.explicitly_set("patch.c"));
    CHECK_FALSE(cfg.explicitly_set("patch.a2"));
    CHECK(cfg.solver_options().preconditioner == PreconditionerKind::Cholesky);
    CHECK(cfg.patch_params().normalized());
  }
  SUBCASE("a misspelt key names the offending key") {
    const auto msg = usage_message(Subcommand::Solve, "[patch]\nc = 1\n[solve]\nkapa = 0.01\n");
    CHECK(msg.find("solve.kapa") != std::string::npos);
  }
  SUBCASE("type mismatch names the key") {
    const auto msg = usage_message(Subcommand::Solve, "[patch]\nc = one\n");
    CHECK(msg.find("patch.c") != std::string::npos);
  }
  SUBCASE("missing required key") {
    const auto msg = usage_message(Subcommand::Solve, "[solve]\nkappa = 0.01\n");
    CHECK(msg.find("patch.c") != std::string::npos);
  }
  SUBCASE("flags override the file; comments are ignored") {
    const auto cfg = parse_config(Subcommand::Solve, "# comment\n[patch]\nc = 1.2 ; trailing\n",
                                  {{"patch.c", "0.7"}, {"solve.kappa", "1e-3"}});
    CHECK(cfg.real("patch.c") == 0.7);
  }
  SUBCASE("malformed lines") {
    CHECK_FALSE(usage_message(Subcommand::Sweep, "[grid\n").empty());
    CHECK_FALSE(usage_message(Subcommand::Sweep, "n = 3\n").empty());
    CHECK_FALSE(usage_message(Subcommand::Sweep, "[grid]\nn 3\n").empty());
    CHECK_FALSE(usage_message(Subcommand::Sweep, "[solver]\npreconditioner = ilu\n").empty());
  }
  SUBCASE("sweep plan from configuration") {
    const auto cfg = parse_config(Subcommand::Sweep, "[sweep]\nc_list = 0.5, 1.5\nkappa_list = 1e-3,2e-3\n", {});
    const auto plan = cfg.sweep_plan();
    CHECK(plan.c_list == std::vector<double>{0.5, 1.5});
    CHECK(plan.kappa_list == std::vector<double>{1e-3, 2e-3});
    const auto dflt = parse_config(Subcommand::Sweep, "", {}).sweep_plan();
    CHECK(dflt.kappa_list == default_kappa_list());
  }
  SUBCASE("out-of-range values name the key") {
    CHECK(usage_message(Subcommand::Solve, "[patch]\nc = 1\n[solve]\nkappa = -0.01\n").find("solve.kappa") !=
          std::string::npos);
    CHECK(usage_message(Subcommand::Simulate, "[patch]\nc = 1\n[simulate]\nkappa = 0.05\npaths = 0\n")
              .find("simulate.paths") != std::string::npos);
    CHECK(usage_message(Subcommand::Simulate, "[patch]\nc = 1\n[simulate]\nkappa = 0\n").empty());
    CHECK_FALSE(usage_message(Subcommand::Sweep, "[sweep]\nkappa_list = 1e-3, 0\n").empty());
  }
  SUBCASE("fit input must exist") {
    CHECK_FALSE(usage_message(Subcommand::Fit, "[fit]\ninput = /nonexistent/sweep.csv\n").empty());
  }
  SUBCASE("config file not found") {
    CHECK_THROWS_AS(parse_config_file(Subcommand::Sweep, "/nonexistent/run.ini", {}), UsageError);
  }
}

TEST_CASE("sha256") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("emit_outputs") {
  const auto cfg = parse_config(Subcommand::Sweep, "[sweep]\nc_list = 1.0\n", {});
  SUBCASE("manifest lists every file with its hash") {
    const auto dir = scratch_dir("manifest");
    const auto written = emit_outputs(cfg, {{"a.csv", "x,y\n1,2\n"}}, dir, false, R"({"wall_seconds": 1.5})");
    REQUIRE(written.size() == 2);
    CHECK(written.back().filename() == "manifest.json");
    const auto m = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
    CHECK(m["subcommand"] == "sweep");
    CHECK(m["files"][0]["name"] == "a.csv");
    CHECK(m["files"][0]["sha256"] == sha256_hex("x,y\n1,2\n"));
    CHECK(m["files"][0]["bytes"] == 8);
    CHECK(m["run"]["wall_seconds"] == 1.5);
    CHECK(m["config"]["sweep.c_list"] == "1.0");
  }
  SUBCASE("refuses to overwrite without the flag") {
    const auto dir = scratch_dir("overwrite");
    emit_outputs(cfg, {{"a.csv", "1\n"}}, dir, false);
    CHECK_THROWS_AS(emit_outputs(cfg, {{"a.csv", "2\n"}}, dir, false), UsageError);
    CHECK(read_text_file(dir / "a.csv") == "1\n");
    emit_outputs(cfg, {{"a.csv", "2\n"}}, dir, true);
    CHECK(read_text_file(dir / "a.csv") == "2\n");
  }
  SUBCASE("an empty result still writes a manifest") {
    const auto dir = scratch_dir("empty");
    const auto written = emit_outputs(cfg, {}, dir, false);
    REQUIRE(written.size() == 1);
    const auto m = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
    CHECK(m["files"].empty());
  }
  SUBCASE("invalid names and extra data") {
    const auto dir = scratch_dir("invalid");
    CHECK_THROWS_AS(emit_outputs(cfg, {{"../x.csv", ""}}, dir, true), IoError);
    CHECK_THROWS_AS(emit_outputs(cfg, {}, dir, true, "{not json"), DataError);
  }
  CHECK_THROWS_AS(read_text_file("/nonexistent/file"), IoError);
}

TEST_CASE("sweep CSV round trip and plot files") {
  std::vector<ExtrapolatedPoint> pts(3);
  for (int i = 0; i < 3; ++i) {
    pts[i].c = i < 2 ? 0.4 : 1.0;
    pts[i].kappa = 1e-3 * (i + 1);
    pts[i].C_extrap = 0.01 + 1.0 / 3.0 * i;
    pts[i].C_var_extrap = pts[i].C_extrap * (1 + 1e-4);
  }
  std::ostringstream os;
  write_sweep_csv(os, pts);
  std::istringstream is(os.str());
  const auto back = read_sweep_csv(is);
  REQUIRE(back.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(back[i].c == pts[i].c);
    CHECK(back[i].kappa == pts[i].kappa);
    CHECK(back[i].C_extrap == pts[i].C_extrap);
  }
  const auto files = plot_additional_diffusivity(pts);
  REQUIRE(files.size() == 2);
  CHECK(files[0].name == "nu_vs_kappa_c0.40.dat");
  CHECK(files[1].name == "nu_vs_kappa_c1.00.dat");

  RegimeRow row;
  row.c = 0.3;
  row.estimate.ok = true;
  row.estimate.n = 1.0;
  row.estimate.q = 0.0;
  const auto regime = plot_regime({row});
  REQUIRE(regime.size() == 2);
  CHECK(regime[0].name == "intercept_vs_c.dat");
  CHECK(regime[1].name == "exponent_vs_c.dat");
}
