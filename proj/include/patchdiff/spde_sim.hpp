#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "patchdiff/grid.hpp"
#include "patchdiff/patch_field.hpp"

namespace patchdiff {

enum class PatchForm {
  Sampled,  // sigma_k evaluated pointwise from the continuum field
  Curl,     // sigma_k = (-D2 psi_k, D1 psi_k) with centered differences of the sampled stream function
};

struct PatchVector {
  int k1 = 0;
  int k2 = 0;
  VectorField2D sigma;
  ScalarField2D stream;               // empty for the sampled form
  std::vector<std::size_t> support;   // nodes where sigma or the stream function is nonzero
};

/// The N^2 periodized patch fields sigma_k^N(x) = grad_perp_psi(N (x - k / N)) on the torus.
struct PatchFamily {
  Grid2D grid;
  int N = 1;
  PatchForm form = PatchForm::Curl;
  PatchParams params;
  std::vector<PatchVector> patches;
  std::vector<std::string> warnings;

  /// sum_k sigma_k sigma_k^T.
  SymMatrixField covariance() const;
};

PatchFamily build_patch_vectors(int N, const Grid2D& grid, const PatchParams& params,
                                PatchForm form = PatchForm::Curl);

/// A family with no patches: the simulation reduces to the heat equation.
PatchFamily no_noise_family(const Grid2D& grid);

/// Radial stream function with psi' = lambda phi / norm and psi = 0 for r >= c.
class RadialStream {
 public:
  explicit RadialStream(const PatchParams& p, int samples = 1 << 16);
  double operator()(double r) const;

 private:
  double c_ = 0.0;
  double h_ = 0.0;
  std::vector<double> table_;
  std::vector<double> slopes_;
};

/// sum_k <v, sigma_k>^2 with the grid inner product <f, g> = mean of f . g.
double quadratic_form_AN(const VectorField2D& v, const PatchFamily& family);

/// Skew-symmetric transport (1/2)(sigma . grad u + div(sigma u)) with centered differences.
ScalarField2D apply_transport(const VectorField2D& sigma, const ScalarField2D& u);

/// d^2 / (4 (kappa + max_x lambda_max(sum_k sigma_k sigma_k^T))).
double max_stable_dt(const PatchFamily& family, double kappa);

/// Euler-Maruyama for du = [kappa Lap u + sum_k B_k^2 u] dt + sqrt(2) sum_k B_k u dW_k, B_k the
/// skew transport along sigma_k. Lap is the 5-point Laplacian. Paths are advanced as a batch;
/// each path draws its increments from its own generator.
class ItoStepper {
 public:
  /// Batch width with a specialized kernel; simulate() advances paths in blocks of this size.
  static constexpr std::size_t kBatchWidth = 16;

  ItoStepper(const PatchFamily& family, double kappa, double dt);

  const Grid2D& grid() const noexcept { return grid_; }
  double dt() const noexcept { return dt_; }
  double kappa() const noexcept { return kappa_; }
  std::size_t patch_count() const noexcept { return n_patches_; }

  /// Deterministic part kappa Lap u + sum_k B_k^2 u.
  ScalarField2D drift(const ScalarField2D& u) const;

  /// One step of a single path.
  ScalarField2D step(const ScalarField2D& u, std::mt19937_64& rng) const;

  /// One step for P paths stored node-major (u[node * P + p]); rngs.size() == P.
  void step_batch(std::vector<double>& u, std::vector<std::mt19937_64>& rngs) const;

 private:
  // Fixed != 0 pins the batch width at compile time.
  template <std::size_t Fixed>
  void apply_drift(const double* u, double* out, std::size_t width) const;
  template <std::size_t Fixed>
  void add_noise(const double* u, const double* xi, double* out, std::size_t width) const;
  template <std::size_t Fixed>
  void accumulate_row(int r, const double* xi, std::size_t width, double* first, double* second) const;

  Grid2D grid_;
  double kappa_ = 0.0;
  double dt_ = 0.0;
  std::size_t n_patches_ = 0;
  std::vector<std::array<std::uint32_t, 13>> nbr_;  // stencil neighbours per node
  std::vector<std::array<double, 13>> coef_;        // drift stencil per node
  // Node -> (patch, stream value) incidence, CSR layout.
  std::vector<std::uint32_t> inc_ptr_;
  std::vector<std::uint32_t> inc_patch_;
  std::vector<double> inc_value_;
  PatchForm form_ = PatchForm::Curl;
  // Node -> (patch, sigma) incidence for the sampled form.
  std::vector<double> inc_s1_, inc_s2_;
};

ScalarField2D step_ito(const ScalarField2D& u, double dt, double kappa, const PatchFamily& family,
                       std::mt19937_64& rng);

struct NoiseConfig {
  int N = 8;
  std::uint64_t seed = 1;
  double dt = 0.0;  // 0 selects the largest stable step that divides T_end evenly
  int paths = 64;
  int threads = 1;
  int samples = 100;  // recorded instants after t = 0
};

struct Ensemble {
  double c = 0.0;
  double kappa = 0.0;
  int N = 0;
  double dt = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> times;
  std::vector<std::vector<std::vector<double>>> obs;  // [test][path][time]
  std::vector<std::vector<double>> energy;            // [path][time], mean of u^2
  double wall_seconds = 0.0;
};

Ensemble simulate(const ScalarField2D& u0, double T_end, const NoiseConfig& config, const PatchFamily& family,
                  double kappa, const std::vector<ScalarField2D>& test_functions);

/// a cos(2 pi m.x) + b sin(2 pi m.x).
struct TrigTerm {
  int m1 = 0;
  int m2 = 0;
  double a = 0.0;
  double b = 0.0;
};

ScalarField2D sample_trig(const Grid2D& grid, const std::vector<TrigTerm>& terms);

/// Solution of the heat equation with diffusivity C at time t from trigonometric data.
ScalarField2D heat_evolve(const Grid2D& grid, const std::vector<TrigTerm>& terms, double C, double t);

struct HomogenizedReference {
  double c = 0.0;
  double kappa = 0.0;
  double C_eff = 0.0;
};

struct ErrorCurve {
  std::vector<double> times;
  std::vector<double> mse;  // E |<u_t - ubar_t, phi>|^2
  double sup = 0.0;
};

ErrorCurve compare_homogenized(const Ensemble& ensemble, const HomogenizedReference& ref,
                               const std::vector<TrigTerm>& u0, const ScalarField2D& phi, std::size_t test_index = 0);

/// Header: time, then mean_obs_j, var_obs_j per test function, then mean_energy.
void write_ensemble_csv(std::ostream& os, const Ensemble& e);

}  // namespace patchdiff
