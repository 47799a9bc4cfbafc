#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "patchdiff/errors.hpp"
#include "patchdiff/powerlaw_fit.hpp"
#include "patchdiff/sweep.hpp"

namespace patchdiff {

/// File-system failures while reading inputs or writing results.
class IoError : public Error {
 public:
  using Error::Error;
};

enum class Subcommand { Solve, Sweep, Fit, Simulate, Verify };

Subcommand parse_subcommand(const std::string& name);
const char* subcommand_name(Subcommand s);

enum class ValueType { Real, Integer, Boolean, Text, RealList, Path };

struct ConfigKey {
  const char* name;  // "section.key"
  ValueType type;
  const char* default_value;
  const char* help;
};

/// Every accepted key, with defaults.
const std::vector<ConfigKey>& config_schema();

/// Validated configuration. Values are kept as text (the form they were given in) and converted on access.
class RunConfig {
 public:
  Subcommand subcommand = Subcommand::Solve;

  double real(const std::string& key) const;
  int integer(const std::string& key) const;
  bool boolean(const std::string& key) const;
  const std::string& text(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;
  /// True when the key came from the file or a flag rather than the defaults.
  bool explicitly_set(const std::string& key) const;

  const std::map<std::string, std::string>& values() const noexcept { return values_; }
  const std::string& source_text() const noexcept { return source_; }

  PatchParams patch_params() const;
  SolverOptions solver_options() const;
  SweepPlan sweep_plan() const;
  /// run.threads with 0 resolved to the hardware thread count.
  int threads() const;
  JackknifeOptions jackknife_options() const;
  FitOptions fit_options() const;

 private:
  friend RunConfig parse_config(Subcommand, const std::string&, const std::map<std::string, std::string>&,
                                const std::filesystem::path&);
  const std::string& raw(const std::string& key) const;

  std::map<std::string, std::string> values_;
  std::map<std::string, bool> explicit_;
  std::string source_;
};

/// INI-style text: "[section]" headers, "key = value" lines, '#' or ';' comments. Flags are given as
/// "section.key" -> value and take precedence over the file. Relative paths resolve against `base_dir`.
RunConfig parse_config(Subcommand sub, const std::string& file_text, const std::map<std::string, std::string>& flags,
                       const std::filesystem::path& base_dir = std::filesystem::current_path());

RunConfig parse_config_file(Subcommand sub, const std::filesystem::path& file,
                            const std::map<std::string, std::string>& flags);

struct OutputFile {
  std::string name;
  std::string content;
};

std::string sha256_hex(const std::string& data);

/// Writes every file plus manifest.json (config echo, per-file SHA-256 and size, and `extra_json`, which
/// must be a JSON object or empty). Refuses a directory that already holds a manifest unless `overwrite`.
/// Returns the written paths, manifest last.
std::vector<std::filesystem::path> emit_outputs(const RunConfig& config, const std::vector<OutputFile>& files,
                                                const std::filesystem::path& dir, bool overwrite,
                                                const std::string& extra_json = "");

/// Two-column (kappa, nu) data, one file per c.
std::vector<OutputFile> plot_additional_diffusivity(const std::vector<ExtrapolatedPoint>& points);

struct RegimeRow {
  double c = 0.0;
  RegimeEstimate estimate;
};

/// intercept_vs_c.dat and exponent_vs_c.dat (c, value, sigma).
std::vector<OutputFile> plot_regime(const std::vector<RegimeRow>& rows);

std::string read_text_file(const std::filesystem::path& file);

}  // namespace patchdiff
