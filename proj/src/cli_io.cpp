#include "patchdiff/cli_io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "patchdiff/numfmt.hpp"

namespace patchdiff {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  for (auto part : split_csv(v)) {
    std::string t = trim(part);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

const ConfigKey* find_key(const std::string& name) {
  for (const auto& k : config_schema())
    if (name == k.name) return &k;
  return nullptr;
}

void check_value(const ConfigKey& key, const std::string& v) {
  auto fail = [&](const char* what) {
    throw UsageError("config key '" + std::string(key.name) + "': expected " + what + ", got '" + v + "'");
  };
  switch (key.type) {
    case ValueType::Real:
      try {
        (void)parse_double(v);
      } catch (const DataError&) {
        fail("a number");
      }
      break;
    case ValueType::Integer: {
      try {
        const double x = parse_double(v);
        if (x != std::floor(x) || std::abs(x) > 2e9) fail("an integer");
      } catch (const DataError&) {
        fail("an integer");
      }
      break;
    }
    case ValueType::Boolean:
      if (v != "true" && v != "false" && v != "1" && v != "0") fail("true or false");
      break;
    case ValueType::RealList:
      try {
        for (const auto& item : split_list(v)) (void)parse_double(item);
      } catch (const DataError&) {
        fail("a comma-separated list of numbers");
      }
      break;
    case ValueType::Text:
    case ValueType::Path:
      break;
  }
}

}  // namespace

Subcommand parse_subcommand(const std::string& name) {
  if (name == "solve") return Subcommand::Solve;
  if (name == "sweep") return Subcommand::Sweep;
  if (name == "fit") return Subcommand::Fit;
  if (name == "simulate") return Subcommand::Simulate;
  if (name == "verify") return Subcommand::Verify;
  throw UsageError("unknown subcommand '" + name + "'");
}

const char* subcommand_name(Subcommand s) {
  switch (s) {
    case Subcommand::Solve: return "solve";
    case Subcommand::Sweep: return "sweep";
    case Subcommand::Fit: return "fit";
    case Subcommand::Simulate: return "simulate";
    case Subcommand::Verify: return "verify";
  }
  return "?";
}

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = {
      {"patch.c", ValueType::Real, "", "support radius of a patch"},
      {"patch.a1", ValueType::Real, "0.05", "inner decay of the profile"},
      {"patch.a2", ValueType::Real, "0.3", "edge decay of the profile"},
      {"patch.lambda", ValueType::Real, "1", "amplitude multiplier"},
      {"grid.n", ValueType::Integer, "200", "nodes per side for a single solve"},
      {"grid.d_list", ValueType::RealList, "0.01,0.005,0.0025", "grid steps for d -> 0 extrapolation"},
      {"solver.tol", ValueType::Real, "1e-10", "relative residual tolerance"},
      {"solver.max_iter", ValueType::Integer, "20000", "iteration cap"},
      {"solver.preconditioner", ValueType::Text, "cholesky", "none, jacobi or cholesky"},
      {"solver.diag_tol", ValueType::Real, "1e-3", "accepted off-diagonal ratio and eigenvalue gap"},
      {"solver.crosscheck_tol", ValueType::Real, "1e-2", "accepted flux/variational relative gap"},
      {"solve.kappa", ValueType::Real, "", "molecular diffusivity"},
      {"sweep.c_list", ValueType::RealList, "0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0,1.1,1.2,1.3,1.4,1.5,1.6,1.7,1.8,1.9",
       "radii"},
      {"sweep.kappa_list", ValueType::RealList, "", "explicit kappa values (overrides kappa_per_decade)"},
      {"sweep.kappa_per_decade", ValueType::Integer, "52", "density of the default kappa list"},
      {"fit.input", ValueType::Path, "", "sweep CSV"},
      {"fit.kappa_star", ValueType::RealList, "0.0016,0.002,0.003,0.004,0.005", "window upper ends"},
      {"fit.kappa_min", ValueType::Real, "1e-4", "exclusive window lower end"},
      {"fit.drop", ValueType::Real, "0.95", "jackknife drop fraction"},
      {"fit.resamples", ValueType::Integer, "200", "jackknife subsamples"},
      {"simulate.kappa", ValueType::Real, "", "molecular diffusivity"},
      {"simulate.N", ValueType::Integer, "8", "patch lattice resolution"},
      {"simulate.n", ValueType::Integer, "128", "nodes per side"},
      {"simulate.paths", ValueType::Integer, "64", "Monte Carlo paths"},
      {"simulate.dt", ValueType::Real, "0", "time step; 0 picks the largest stable step"},
      {"simulate.T_end", ValueType::Real, "0", "final time; 0 means one e-fold decay of the mode at C_eff"},
      {"simulate.samples", ValueType::Integer, "100", "recorded instants"},
      {"simulate.compare", ValueType::Boolean, "true", "compare with the homogenized heat solution"},
      {"verify.fast", ValueType::Boolean, "false", "smaller grids and scans"},
      {"run.output", ValueType::Path, "patchdiff-out", "output directory"},
      {"run.overwrite", ValueType::Boolean, "false", "allow reusing an output directory"},
      {"run.seed", ValueType::Integer, "1", "master seed"},
      {"run.threads", ValueType::Integer, "0", "worker threads; 0 uses every hardware thread"},
  };
  return schema;
}

RunConfig parse_config(Subcommand sub, const std::string& file_text, const std::map<std::string, std::string>& flags,
                       const fs::path& base_dir) {
  RunConfig cfg;
  cfg.subcommand = sub;
  cfg.source_ = file_text;
  for (const auto& k : config_schema()) {
    cfg.values_[k.name] = k.default_value;
    cfg.explicit_[k.name] = false;
  }

  auto assign = [&](const std::string& name, const std::string& value, const std::string& where) {
    const ConfigKey* key = find_key(name);
    if (!key) throw UsageError("unknown config key '" + name + "'" + where);
    check_value(*key, value);
    std::string v = value;
    if (key->type == ValueType::Path && !v.empty()) v = (base_dir / v).lexically_normal().string();
    cfg.values_[name] = v;
    cfg.explicit_[name] = true;
  };

  std::istringstream in(file_text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    std::string t = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (t.empty()) continue;
    const std::string where = " (line " + std::to_string(lineno) + ")";
    if (t.front() == '[') {
      if (t.back() != ']') throw UsageError("malformed section header" + where);
      section = trim(std::string_view(t).substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw UsageError("expected 'key = value'" + where);
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (section.empty()) throw UsageError("key '" + key + "' outside any section" + where);
    assign(section + "." + key, value, where);
  }
  for (const auto& [k, v] : flags) assign(k, v, " (command line)");

  std::vector<std::string> required;
  switch (sub) {
    case Subcommand::Solve: required = {"patch.c", "solve.kappa"}; break;
    case Subcommand::Simulate: required = {"patch.c", "simulate.kappa"}; break;
    case Subcommand::Fit: required = {"fit.input"}; break;
    case Subcommand::Sweep:
    case Subcommand::Verify: break;
  }
  for (const auto& r : required)
    if (cfg.values_.at(r).empty()) throw UsageError("missing required key '" + r + "'");

  for (const char* k : {"patch.c", "patch.a1", "patch.a2", "patch.lambda", "solve.kappa", "grid.n", "solver.tol",
                        "solver.max_iter", "simulate.N", "simulate.n", "simulate.paths", "simulate.samples"}) {
    const std::string& v = cfg.values_.at(k);
    if (!v.empty() && !(parse_double(v) > 0.0)) throw UsageError("config key '" + std::string(k) + "' must be > 0");
  }
  for (const char* k : {"simulate.kappa", "simulate.dt", "simulate.T_end", "run.threads"}) {
    const std::string& v = cfg.values_.at(k);
    if (!v.empty() && !(parse_double(v) >= 0.0)) throw UsageError("config key '" + std::string(k) + "' must be >= 0");
  }
  for (double k : cfg.reals("sweep.kappa_list"))
    if (!(k > 0.0)) throw UsageError("config key 'sweep.kappa_list' must hold positive values");

  if (sub == Subcommand::Simulate) {
    const auto n = static_cast<long>(parse_double(cfg.values_.at("simulate.n")));
    const auto N = static_cast<long>(parse_double(cfg.values_.at("simulate.N")));
    if (n % N != 0) throw UsageError("config key 'simulate.n' must be divisible by 'simulate.N'");
  }

  if (sub == Subcommand::Fit && !fs::exists(cfg.values_.at("fit.input")))
    throw UsageError("fit.input: no such file '" + cfg.values_.at("fit.input") + "'");
  const std::string pc = cfg.values_.at("solver.preconditioner");
  if (pc != "none" && pc != "jacobi" && pc != "cholesky")
    throw UsageError("config key 'solver.preconditioner': expected none, jacobi or cholesky, got '" + pc + "'");
  return cfg;
}

RunConfig parse_config_file(Subcommand sub, const fs::path& file, const std::map<std::string, std::string>& flags) {
  if (!fs::exists(file)) throw UsageError("config file not found: " + file.string());
  return parse_config(sub, read_text_file(file), flags, fs::absolute(file).parent_path());
}

const std::string& RunConfig::raw(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::real(const std::string& key) const {
  const std::string& v = raw(key);
  if (v.empty()) throw UsageError("missing required key '" + key + "'");
  return parse_double(v);
}

int RunConfig::integer(const std::string& key) const { return static_cast<int>(real(key)); }

bool RunConfig::boolean(const std::string& key) const {
  const std::string& v = raw(key);
  return v == "true" || v == "1";
}

const std::string& RunConfig::text(const std::string& key) const { return raw(key); }

std::vector<double> RunConfig::reals(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list(raw(key))) out.push_back(parse_double(item));
  return out;
}

bool RunConfig::explicitly_set(const std::string& key) const {
  const auto it = explicit_.find(key);
  return it != explicit_.end() && it->second;
}

PatchParams RunConfig::patch_params() const {
  const double c = raw("patch.c").empty() ? 1.0 : real("patch.c");
  try {
    return make_patch_params(c, real("patch.a1"), real("patch.a2"), real("patch.lambda"));
  } catch (const DomainError& e) {
    throw UsageError(std::string("patch parameters: ") + e.what());
  } catch (const PreconditionError& e) {
    throw UsageError(std::string("patch parameters: ") + e.what());
  }
}

SolverOptions RunConfig::solver_options() const {
  SolverOptions o;
  o.tol = real("solver.tol");
  o.max_iter = integer("solver.max_iter");
  const std::string& pc = text("solver.preconditioner");
  o.preconditioner = pc == "none"     ? PreconditionerKind::None
                     : pc == "jacobi" ? PreconditionerKind::Jacobi
                                      : PreconditionerKind::Cholesky;
  o.diag_tol = real("solver.diag_tol");
  o.crosscheck_tol = real("solver.crosscheck_tol");
  return o;
}

SweepPlan RunConfig::sweep_plan() const {
  SweepPlan p;
  p.c_list = reals("sweep.c_list");
  p.kappa_list = raw("sweep.kappa_list").empty() ? default_kappa_list(integer("sweep.kappa_per_decade"))
                                                 : reals("sweep.kappa_list");
  p.d_list = reals("grid.d_list");
  p.a1 = real("patch.a1");
  p.a2 = real("patch.a2");
  p.lambda = real("patch.lambda");
  p.solver = solver_options();
  p.threads = threads();
  try {
    p.validate();
  } catch (const ConfigurationError& e) {
    throw UsageError(e.what());
  }
  return p;
}

int RunConfig::threads() const {
  const int t = integer("run.threads");
  return t > 0 ? t : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

JackknifeOptions RunConfig::jackknife_options() const {
  JackknifeOptions j;
  j.drop_fraction = real("fit.drop");
  j.n_resamples = integer("fit.resamples");
  j.seed = static_cast<std::uint64_t>(integer("run.seed"));
  j.threads = threads();
  return j;
}

FitOptions RunConfig::fit_options() const {
  FitOptions o;
  o.kappa_min = real("fit.kappa_min");
  return o;
}

std::string read_text_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw IoError("SHA-256 computation failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

std::vector<fs::path> emit_outputs(const RunConfig& config, const std::vector<OutputFile>& files, const fs::path& dir,
                                   bool overwrite, const std::string& extra_json) {
  std::error_code ec;
  const fs::path manifest_path = dir / "manifest.json";
  if (fs::exists(manifest_path) && !overwrite)
    throw UsageError("output directory " + dir.string() + " already holds results; pass --overwrite to replace them");
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  nlohmann::ordered_json manifest;
  manifest["tool"] = "patchdiff";
  manifest["subcommand"] = subcommand_name(config.subcommand);
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config.values()) cfg[k] = v;
  manifest["config"] = cfg;
  manifest["config_source"] = config.source_text();
  manifest["files"] = nlohmann::ordered_json::array();

  std::vector<fs::path> written;
  for (const auto& f : files) {
    if (f.name == "manifest.json" || f.name.find('/') != std::string::npos)
      throw IoError("invalid output file name '" + f.name + "'");
    const fs::path p = dir / f.name;
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + p.string());
    out << f.content;
    out.close();
    if (!out) throw IoError("write failed for " + p.string());
    manifest["files"].push_back({{"name", f.name}, {"sha256", sha256_hex(f.content)}, {"bytes", f.content.size()}});
    written.push_back(p);
  }
  if (!extra_json.empty()) {
    try {
      manifest["run"] = nlohmann::ordered_json::parse(extra_json);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("manifest extra data is not valid JSON: ") + e.what());
    }
  }
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + manifest_path.string());
  out << manifest.dump(2) << '\n';
  out.close();
  if (!out) throw IoError("write failed for " + manifest_path.string());
  written.push_back(manifest_path);
  return written;
}

std::vector<OutputFile> plot_additional_diffusivity(const std::vector<ExtrapolatedPoint>& points) {
  std::map<double, std::string> by_c;
  for (const auto& p : points) by_c[p.c] += fmt17(p.kappa) + ' ' + fmt17(p.nu()) + '\n';
  std::vector<OutputFile> out;
  for (const auto& [c, body] : by_c) {
    char name[64];
    std::snprintf(name, sizeof name, "nu_vs_kappa_c%.2f.dat", c);
    out.push_back({name, "# kappa nu\n" + body});
  }
  return out;
}

std::vector<OutputFile> plot_regime(const std::vector<RegimeRow>& rows) {
  std::string q = "# c q sigma_q\n", n = "# c n sigma_n\n";
  for (const auto& r : rows) {
    if (!r.estimate.ok) continue;
    q += fmt17(r.c) + ' ' + fmt17(r.estimate.q) + ' ' + fmt17(r.estimate.sigma_q) + '\n';
    n += fmt17(r.c) + ' ' + fmt17(r.estimate.n) + ' ' + fmt17(r.estimate.sigma_n) + '\n';
  }
  return {{"intercept_vs_c.dat", q}, {"exponent_vs_c.dat", n}};
}

}  // namespace patchdiff
