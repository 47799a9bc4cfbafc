#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "doctest.h"
#include "patchdiff/spde_sim.hpp"

using namespace patchdiff;

namespace {

ScalarField2D random_field(const Grid2D& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N;
  ScalarField2D f(g);
  for (auto& v : f.values) v = N(rng);
  return f;
}

double inner(const ScalarField2D& a, const ScalarField2D& b) {
  return a.values.dot(b.values) / static_cast<double>(a.grid.size());
}

double max_rel_dev(const SymMatrixField& A, const SymMatrixField& B) {
  const double scale = std::max({A.a11.values.cwiseAbs().maxCoeff(), A.a22.values.cwiseAbs().maxCoeff()});
  const double dev = std::max({(A.a11.values - B.a11.values).cwiseAbs().maxCoeff(),
                               (A.a12.values - B.a12.values).cwiseAbs().maxCoeff(),
                               (A.a22.values - B.a22.values).cwiseAbs().maxCoeff()});
  return dev / scale;
}

}  // namespace

TEST_CASE("patch family layout") {
  const Grid2D g(64);
  const auto p = make_patch_params(0.8);
  const auto fam = build_patch_vectors(4, g, p, PatchForm::Sampled);
  CHECK(fam.patches.size() == 16);
  for (const auto& pv : fam.patches) CHECK(pv.support.size() < g.size());
  CHECK_THROWS_AS(build_patch_vectors(3, g, p), PreconditionError);
  CHECK_THROWS_AS(build_patch_vectors(0, g, p), PreconditionError);
}

TEST_CASE("sampled covariance equals A^N when patches do not overlap their own images") {
  const Grid2D g(128);
  for (double c : {0.4, 1.0, 1.4})
    for (int N : {1, 2, 4, 8}) {
      const auto p = make_patch_params(c);
      const auto fam = build_patch_vectors(N, g, p, PatchForm::Sampled);
      CHECK(fam.warnings.empty() == (N > 2 * c));
      if (N >= 2 * c)
        CHECK(max_rel_dev(assemble_A(g, p, N), fam.covariance()) <= 1e-13);
      else  // a patch and its periodic image share one Brownian motion, so cross terms appear
        CHECK(max_rel_dev(assemble_A(g, p, N), fam.covariance()) > 1e-3);
    }
}

TEST_CASE("curl covariance approaches A^N under refinement") {
  const auto p = make_patch_params(1.0);
  const double coarse = max_rel_dev(assemble_A(Grid2D(64), p, 2),
                                    build_patch_vectors(2, Grid2D(64), p, PatchForm::Curl).covariance());
  const double fine = max_rel_dev(assemble_A(Grid2D(256), p, 2),
                                  build_patch_vectors(2, Grid2D(256), p, PatchForm::Curl).covariance());
  CHECK(fine < 0.05);
  CHECK(fine < coarse / 3.0);
}

TEST_CASE("radial stream function") {
  const auto p = make_patch_params(1.2);
  const RadialStream psi(p);
  CHECK(psi(1.2) == 0.0);
  CHECK(psi(2.0) == 0.0);
  for (double r : {0.2, 0.5, 0.9}) {
    const double h = 1e-4;
    const double slope = (psi(r + h) - psi(r - h)) / (2 * h);
    CHECK(slope == doctest::Approx(profile_phi(r, p) / p.norm).epsilon(1e-5));
  }
}

TEST_CASE("transport is skew-adjoint and mean preserving") {
  const Grid2D g(64);
  const auto fam = build_patch_vectors(2, g, make_patch_params(1.0));
  const auto u = random_field(g, 1), v = random_field(g, 2);
  for (const auto& pv : fam.patches) {
    const auto Bu = apply_transport(pv.sigma, u);
    const auto Bv = apply_transport(pv.sigma, v);
    const double scale = std::sqrt(inner(Bu, Bu) * inner(v, v));
    CHECK(std::abs(inner(v, Bu) + inner(Bv, u)) <= 1e-13 * scale);
    CHECK(std::abs(Bu.mean()) <= 1e-13 * std::sqrt(inner(Bu, Bu)));
  }
}

TEST_CASE("quadratic form matches the covariance field") {
  const Grid2D g(32);
  const auto fam = build_patch_vectors(2, g, make_patch_params(1.0), PatchForm::Sampled);
  VectorField2D v(g);
  v.x1.values.setConstant(1.0);
  // sum_k <e1, sigma_k>^2 with grid means.
  double expect = 0.0;
  for (const auto& pv : fam.patches) expect += std::pow(pv.sigma.x1.mean(), 2);
  CHECK(quadratic_form_AN(v, fam) == doctest::Approx(expect).epsilon(1e-13));
}

TEST_CASE("stepper without noise is explicit Euler for the 5-point Laplacian") {
  const Grid2D g(32);
  const auto fam = no_noise_family(g);
  const double kappa = 0.2;
  CHECK(max_stable_dt(fam, kappa) == doctest::Approx(g.d() * g.d() / (4 * kappa)));
  CHECK_THROWS_AS(max_stable_dt(fam, 0.0), ConfigurationError);
  CHECK_THROWS_AS(ItoStepper(fam, kappa, 2 * max_stable_dt(fam, kappa)), ConfigurationError);

  const double dt = max_stable_dt(fam, kappa);
  const ItoStepper st(fam, kappa, dt);
  const auto u = sample_trig(g, {{1, 2, 1.0, 0.0}});
  std::mt19937_64 rng(1);
  const auto next = st.step(u, rng);
  const double h = g.d();
  const double lam = kappa * (2 / (h * h)) * ((1 - std::cos(2 * std::numbers::pi * h)) +
                                              (1 - std::cos(4 * std::numbers::pi * h)));
  CHECK((next.values - (1 - dt * lam) * u.values).cwiseAbs().maxCoeff() <= 1e-13);
  const auto drift = st.drift(ScalarField2D(g, Eigen::VectorXd::Constant(static_cast<Eigen::Index>(g.size()), 3.0)));
  CHECK(drift.values.cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("noise energy cancels the Ito correction") {
  const Grid2D g(64);
  for (auto form : {PatchForm::Sampled, PatchForm::Curl}) {
    const auto fam = build_patch_vectors(4, g, make_patch_params(1.0), form);
    const ItoStepper noise_only(fam, 0.0, max_stable_dt(fam, 0.0));
    for (int t = 0; t < 5; ++t) {
      const auto u = random_field(g, 100 + t);
      double transport = 0.0;
      for (const auto& pv : fam.patches) {
        const auto Bu = apply_transport(pv.sigma, u);
        transport += inner(Bu, Bu);
      }
      const double correction = inner(u, noise_only.drift(u));
      CHECK(std::abs(transport + correction) <= 1e-12 * transport);
    }
  }
}

TEST_CASE("batched steps agree with single-path steps") {
  const Grid2D g(32);
  const auto fam = build_patch_vectors(2, g, make_patch_params(1.0));
  const ItoStepper st(fam, 0.05, 0.5 * max_stable_dt(fam, 0.05));
  const auto u0 = sample_trig(g, {{1, 0, 1.0, 0.0}, {0, 1, 0.0, 0.5}});
  for (std::size_t P : {std::size_t{3}, ItoStepper::kBatchWidth}) {
    std::vector<std::mt19937_64> rngs, singles;
    for (std::size_t p = 0; p < P; ++p) {
      rngs.emplace_back(17 + p);
      singles.emplace_back(17 + p);
    }
    std::vector<double> batch(g.size() * P);
    for (std::size_t k = 0; k < g.size(); ++k)
      for (std::size_t p = 0; p < P; ++p) batch[k * P + p] = u0.values[static_cast<Eigen::Index>(k)];
    std::vector<ScalarField2D> paths(P, u0);
    for (int s = 0; s < 4; ++s) {
      st.step_batch(batch, rngs);
      for (std::size_t p = 0; p < P; ++p) paths[p] = st.step(paths[p], singles[p]);
    }
    double dev = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k)
      for (std::size_t p = 0; p < P; ++p)
        dev = std::max(dev, std::abs(batch[k * P + p] - paths[p].values[static_cast<Eigen::Index>(k)]));
    CHECK(dev <= 1e-13);
  }
}

TEST_CASE("heat_evolve decays each mode") {
  const Grid2D g(16);
  const double C = 0.03, t = 0.4;
  const auto u = heat_evolve(g, {{2, 1, 0.7, -0.2}}, C, t);
  const double f = std::exp(-4 * std::numbers::pi * std::numbers::pi * 5 * C * t);
  const auto x = g.position(3, 5);
  const double arg = 2 * std::numbers::pi * (2 * x[0] + x[1]);
  CHECK(u(3, 5) == doctest::Approx(f * (0.7 * std::cos(arg) - 0.2 * std::sin(arg))).epsilon(1e-13));
}

TEST_CASE("ensembles") {
  const Grid2D g(32);
  const auto p = make_patch_params(1.0);
  const auto fam = build_patch_vectors(2, g, p);
  const std::vector<TrigTerm> init{{1, 0, 1.0, 0.0}};
  const auto u0 = sample_trig(g, init);
  NoiseConfig cfg;
  cfg.paths = 20;
  cfg.samples = 5;
  cfg.seed = 9;
  const auto e = simulate(u0, 0.01, cfg, fam, 0.05, {u0});
  CHECK(e.times.size() == 6);
  CHECK(e.times.back() == doctest::Approx(0.01));
  CHECK(e.obs.size() == 1);
  CHECK(e.obs[0].size() == 20);
  CHECK(e.obs[0][7][0] == doctest::Approx(0.5));

  SUBCASE("paths depend only on the seed and their index") {
    NoiseConfig c2 = cfg;
    c2.threads = 2;
    const auto e2 = simulate(u0, 0.01, c2, fam, 0.05, {u0});
    CHECK(e2.obs[0][19] == e.obs[0][19]);
    c2.paths = 16;
    c2.threads = 1;
    const auto e3 = simulate(u0, 0.01, c2, fam, 0.05, {u0});
    CHECK(e3.obs[0][5] == e.obs[0][5]);
    c2.seed = 10;
    const auto e4 = simulate(u0, 0.01, c2, fam, 0.05, {u0});
    CHECK(e4.obs[0][5].back() != e.obs[0][5].back());
  }
  SUBCASE("energy does not grow in mean") {
    double first = 0.0, last = 0.0;
    for (const auto& path : e.energy) {
      first += path.front();
      last += path.back();
    }
    CHECK(last < first);
  }
  SUBCASE("comparison against the heat solution") {
    const auto err = compare_homogenized(e, {1.0, 0.05, 0.1}, init, u0);
    CHECK(err.mse.size() == e.times.size());
    CHECK(err.mse.front() <= 1e-28);
    CHECK(err.sup >= err.mse.back());
    CHECK_THROWS_AS(compare_homogenized(e, {0.9, 0.05, 0.1}, init, u0), DataError);
    CHECK_THROWS_AS(compare_homogenized(e, {1.0, 0.05, 0.1}, init, u0, 3), PreconditionError);
  }
  SUBCASE("CSV output") {
    std::ostringstream os;
    write_ensemble_csv(os, e);
    CHECK(os.str().rfind("time,mean_obs_0,var_obs_0,mean_energy\n", 0) == 0);
  }
  CHECK_THROWS_AS(simulate(u0, -1.0, cfg, fam, 0.05, {u0}), ConfigurationError);
}
