#include "patchdiff/spde_sim.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <numbers>
#include <optional>
#include <ostream>
#include <thread>

#include "patchdiff/numfmt.hpp"

namespace patchdiff {

namespace {

constexpr int kStencil = 13;
// Offsets of the drift stencil; entries 1-4 are the axis neighbours used by the transport operator.
constexpr std::array<std::array<int, 2>, kStencil> kOffsets = {{{0, 0},
                                                                {1, 0},
                                                                {-1, 0},
                                                                {0, 1},
                                                                {0, -1},
                                                                {2, 0},
                                                                {-2, 0},
                                                                {0, 2},
                                                                {0, -2},
                                                                {1, 1},
                                                                {1, -1},
                                                                {-1, 1},
                                                                {-1, -1}}};

int offset_slot(int a, int b) {
  for (int s = 0; s < kStencil; ++s)
    if (kOffsets[static_cast<std::size_t>(s)][0] == a && kOffsets[static_cast<std::size_t>(s)][1] == b) return s;
  throw PreconditionError("drift stencil: offset outside the 13-point pattern");
}

int positive_mod(int a, int m) {
  const int r = a % m;
  return r < 0 ? r + m : r;
}

// Weight of u(x + o) in the skew transport at x, for the four axis offsets o (slots 1..4).
std::array<double, 4> transport_weights(const VectorField2D& s, int i, int j, double inv4d) {
  return {(s.x1(i, j) + s.x1(i + 1, j)) * inv4d, -(s.x1(i, j) + s.x1(i - 1, j)) * inv4d,
          (s.x2(i, j) + s.x2(i, j + 1)) * inv4d, -(s.x2(i, j) + s.x2(i, j - 1)) * inv4d};
}

}  // namespace

// ---------------------------------------------------------------------------
// Radial stream function

RadialStream::RadialStream(const PatchParams& p, int samples) : c_(p.c) {
  if (!p.normalized()) throw PreconditionError("RadialStream: patch norm not computed");
  if (samples < 16) throw PreconditionError("RadialStream: too few samples");
  h_ = c_ / samples;
  table_.assign(static_cast<std::size_t>(samples) + 1, 0.0);
  auto dpsi = [&](double r) { return p.lambda * profile_phi(r, p) / p.norm; };
  for (int i = samples - 1; i >= 0; --i) {
    const double a = i * h_, b = (i + 1) * h_;
    const double seg = h_ / 6.0 * (dpsi(a) + 4.0 * dpsi(0.5 * (a + b)) + dpsi(b));
    table_[static_cast<std::size_t>(i)] = table_[static_cast<std::size_t>(i) + 1] - seg;
  }
  // Derivatives at the table nodes for Hermite interpolation.
  slopes_.resize(table_.size());
  for (std::size_t i = 0; i < table_.size(); ++i) slopes_[i] = dpsi(static_cast<double>(i) * h_);
}

double RadialStream::operator()(double r) const {
  if (!std::isfinite(r) || r < 0.0) throw DomainError("RadialStream: radius must be finite and >= 0");
  if (r >= c_) return 0.0;
  const auto last = table_.size() - 1;
  const auto i = std::min(static_cast<std::size_t>(r / h_), last - 1);
  const double t = r / h_ - static_cast<double>(i);
  const double t2 = t * t, t3 = t2 * t;
  const double h00 = 2 * t3 - 3 * t2 + 1, h10 = t3 - 2 * t2 + t, h01 = -2 * t3 + 3 * t2, h11 = t3 - t2;
  return h00 * table_[i] + h10 * h_ * slopes_[i] + h01 * table_[i + 1] + h11 * h_ * slopes_[i + 1];
}

// ---------------------------------------------------------------------------
// Patch family

SymMatrixField PatchFamily::covariance() const {
  SymMatrixField A(grid);
  for (const auto& pv : patches) {
    for (std::size_t k : pv.support) {
      const auto e = static_cast<Eigen::Index>(k);
      const double s1 = pv.sigma.x1.values[e], s2 = pv.sigma.x2.values[e];
      A.a11.values[e] += s1 * s1;
      A.a12.values[e] += s1 * s2;
      A.a22.values[e] += s2 * s2;
    }
  }
  return A;
}

PatchFamily build_patch_vectors(int N, const Grid2D& grid, const PatchParams& params, PatchForm form) {
  params.validate();
  if (!params.normalized()) throw PreconditionError("build_patch_vectors: patch norm not computed");
  if (N < 1) throw PreconditionError("build_patch_vectors: N must be >= 1");
  const int n = grid.n();
  if (n % N != 0)
    throw PreconditionError("build_patch_vectors: grid size " + std::to_string(n) + " is not divisible by N = " +
                            std::to_string(N));

  PatchFamily fam;
  fam.grid = grid;
  fam.N = N;
  fam.form = form;
  fam.params = params;
  if (!(1.0 / N < 1.0 / (2.0 * params.c)))
    fam.warnings.push_back("patch spacing 1/N = " + fmt17(1.0 / N) + " is not below 1/(2c) = " +
                           fmt17(1.0 / (2.0 * params.c)));

  const auto NN = static_cast<std::size_t>(N) * static_cast<std::size_t>(N);
  fam.patches.resize(NN);
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b) {
      auto& pv = fam.patches[static_cast<std::size_t>(a * N + b)];
      pv.k1 = a;
      pv.k2 = b;
      pv.sigma = VectorField2D(grid);
      if (form == PatchForm::Curl) pv.stream = ScalarField2D(grid);
    }

  const int K = summation_half_width(params.c);
  const double c2 = params.c * params.c;
  const double dN = N;
  std::optional<RadialStream> psi;
  if (form == PatchForm::Curl) psi.emplace(params);

  // Same lattice walk as assemble_A; each lattice point is routed to its class modulo N.
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const auto x = grid.position(i, j);
      const double y1 = dN * x[0], y2 = dN * x[1];
      const auto node = static_cast<Eigen::Index>(grid.index(i, j));
      for (int k1 = -K; k1 <= N + K; ++k1) {
        const double z1 = y1 - k1;
        if (z1 * z1 >= c2) continue;
        for (int k2 = -K; k2 <= N + K; ++k2) {
          const double z2 = y2 - k2;
          if (z1 * z1 + z2 * z2 >= c2) continue;
          auto& pv = fam.patches[static_cast<std::size_t>(positive_mod(k1, N) * N + positive_mod(k2, N))];
          if (form == PatchForm::Sampled) {
            const auto s = grad_perp_psi({z1, z2}, params);
            pv.sigma.x1.values[node] += s[0];
            pv.sigma.x2.values[node] += s[1];
          } else {
            pv.stream.values[node] += (*psi)(std::hypot(z1, z2)) / dN;
          }
        }
      }
    }
  }

  if (form == PatchForm::Curl) {
    const double half_inv_d = 0.5 * n;
    for (auto& pv : fam.patches) {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          pv.sigma.x1(i, j) = -half_inv_d * (pv.stream(i, j + 1) - pv.stream(i, j - 1));
          pv.sigma.x2(i, j) = half_inv_d * (pv.stream(i + 1, j) - pv.stream(i - 1, j));
        }
    }
  }

  for (auto& pv : fam.patches) {
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const auto e = static_cast<Eigen::Index>(k);
      const bool s = pv.sigma.x1.values[e] != 0.0 || pv.sigma.x2.values[e] != 0.0;
      const bool f = form == PatchForm::Curl && pv.stream.values[e] != 0.0;
      if (s || f) pv.support.push_back(k);
    }
  }
  return fam;
}

PatchFamily no_noise_family(const Grid2D& grid) {
  PatchFamily fam;
  fam.grid = grid;
  fam.N = 1;
  fam.form = PatchForm::Curl;
  return fam;
}

double quadratic_form_AN(const VectorField2D& v, const PatchFamily& family) {
  if (!(v.grid() == family.grid)) throw PreconditionError("quadratic_form_AN: grid mismatch");
  const double inv = 1.0 / static_cast<double>(family.grid.size());
  double total = 0.0;
  for (const auto& pv : family.patches) {
    double ip = 0.0;
    for (std::size_t k : pv.support) {
      const auto e = static_cast<Eigen::Index>(k);
      ip += v.x1.values[e] * pv.sigma.x1.values[e] + v.x2.values[e] * pv.sigma.x2.values[e];
    }
    ip *= inv;
    total += ip * ip;
  }
  return total;
}

ScalarField2D apply_transport(const VectorField2D& sigma, const ScalarField2D& u) {
  if (!(sigma.grid() == u.grid)) throw PreconditionError("apply_transport: grid mismatch");
  const Grid2D& g = u.grid;
  const int n = g.n();
  const double inv4d = 0.25 * n;
  ScalarField2D out(g);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const auto w = transport_weights(sigma, i, j, inv4d);
      out(i, j) = w[0] * u(i + 1, j) + w[1] * u(i - 1, j) + w[2] * u(i, j + 1) + w[3] * u(i, j - 1);
    }
  return out;
}

double max_stable_dt(const PatchFamily& family, double kappa) {
  if (!std::isfinite(kappa) || kappa < 0.0) throw DomainError("max_stable_dt: kappa must be >= 0");
  double lmax = 0.0;
  if (!family.patches.empty()) {
    const SymMatrixField A = family.covariance();
    for (std::size_t k = 0; k < A.grid().size(); ++k) {
      const auto e = static_cast<Eigen::Index>(k);
      lmax = std::max(lmax, sym2_eigenvalues(A.a11.values[e], A.a12.values[e], A.a22.values[e])[1]);
    }
  }
  const double denom = 4.0 * (kappa + lmax);
  if (!(denom > 0.0)) throw ConfigurationError("max_stable_dt: no diffusion and no noise");
  const double d = family.grid.d();
  return d * d / denom;
}

// ---------------------------------------------------------------------------
// Stepper

ItoStepper::ItoStepper(const PatchFamily& family, double kappa, double dt)
    : grid_(family.grid), kappa_(kappa), dt_(dt), n_patches_(family.patches.size()), form_(family.form) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigurationError("ItoStepper: dt must be > 0");
  const double bound = max_stable_dt(family, kappa);
  if (dt > bound)
    throw ConfigurationError("ItoStepper: dt = " + fmt17(dt) + " exceeds the stability bound " + fmt17(bound));

  const int n = grid_.n();
  const std::size_t m = grid_.size();
  nbr_.resize(m);
  coef_.assign(m, {});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      auto& nb = nbr_[grid_.index(i, j)];
      for (int s = 0; s < kStencil; ++s)
        nb[static_cast<std::size_t>(s)] = static_cast<std::uint32_t>(
            grid_.index(i + kOffsets[static_cast<std::size_t>(s)][0], j + kOffsets[static_cast<std::size_t>(s)][1]));
    }

  // sum_k B_k^2: coefficient of u(x + o + o') in (B_k B_k u)(x) is b_k(x, o) b_k(x + o, o').
  const double inv4d = 0.25 * n;
  for (const auto& pv : family.patches) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const auto w = transport_weights(pv.sigma, i, j, inv4d);
        auto& cf = coef_[grid_.index(i, j)];
        for (int o = 0; o < 4; ++o) {
          if (w[static_cast<std::size_t>(o)] == 0.0) continue;
          const auto& off = kOffsets[static_cast<std::size_t>(o) + 1];
          const auto w2 = transport_weights(pv.sigma, i + off[0], j + off[1], inv4d);
          for (int o2 = 0; o2 < 4; ++o2) {
            const auto& off2 = kOffsets[static_cast<std::size_t>(o2) + 1];
            cf[static_cast<std::size_t>(offset_slot(off[0] + off2[0], off[1] + off2[1]))] +=
                w[static_cast<std::size_t>(o)] * w2[static_cast<std::size_t>(o2)];
          }
        }
      }
  }
  const double kd = kappa * n * static_cast<double>(n);
  for (auto& cf : coef_) {
    cf[0] -= 4.0 * kd;
    for (int s = 1; s <= 4; ++s) cf[static_cast<std::size_t>(s)] += kd;
  }

  // Node -> patch incidence.
  inc_ptr_.assign(m + 1, 0);
  for (const auto& pv : family.patches)
    for (std::size_t k : pv.support) ++inc_ptr_[k + 1];
  for (std::size_t k = 0; k < m; ++k) inc_ptr_[k + 1] += inc_ptr_[k];
  const std::size_t nnz = inc_ptr_[m];
  inc_patch_.resize(nnz);
  if (form_ == PatchForm::Curl) {
    inc_value_.resize(nnz);
  } else {
    inc_s1_.resize(nnz);
    inc_s2_.resize(nnz);
  }
  std::vector<std::uint32_t> fill(inc_ptr_.begin(), inc_ptr_.end() - 1);
  for (std::size_t p = 0; p < family.patches.size(); ++p) {
    const auto& pv = family.patches[p];
    for (std::size_t k : pv.support) {
      const std::uint32_t slot = fill[k]++;
      inc_patch_[slot] = static_cast<std::uint32_t>(p);
      const auto e = static_cast<Eigen::Index>(k);
      if (form_ == PatchForm::Curl) {
        inc_value_[slot] = pv.stream.values[e];
      } else {
        inc_s1_[slot] = pv.sigma.x1.values[e];
        inc_s2_[slot] = pv.sigma.x2.values[e];
      }
    }
  }
}

namespace {

// Batch kernels for ItoStepper::kBatchWidth paths, cloned per instruction set. The library is built
// without floating-point contraction, so every clone rounds identically.
#if defined(__GNUC__) && defined(__x86_64__) && !defined(__clang__)
#define PATCHDIFF_KERNEL __attribute__((target_clones("avx512f", "avx2", "default")))
#else
#define PATCHDIFF_KERNEL
#endif

constexpr std::size_t kW = ItoStepper::kBatchWidth;

// out = u + dt * drift(u), or drift(u) alone when dt == 0.
PATCHDIFF_KERNEL
void drift_kernel(const std::uint32_t* nbr, const double* coef, std::size_t m, const double* u, double dt,
                  double* out) {
  for (std::size_t k = 0; k < m; ++k) {
    double acc[kW] = {};
    for (std::size_t s = 0; s < kStencil; ++s) {
      const double w = coef[k * kStencil + s];
      if (w == 0.0) continue;
      const double* un = u + static_cast<std::size_t>(nbr[k * kStencil + s]) * kW;
      for (std::size_t p = 0; p < kW; ++p) acc[p] += w * un[p];
    }
    double* o = out + k * kW;
    if (dt == 0.0) {
      for (std::size_t p = 0; p < kW; ++p) o[p] = acc[p];
    } else {
      const double* uk = u + k * kW;
      for (std::size_t p = 0; p < kW; ++p) o[p] = uk[p] + dt * acc[p];
    }
  }
}

PATCHDIFF_KERNEL
void stream_kernel(const std::uint32_t* ptr, const std::uint32_t* patch, const double* value, std::size_t k0,
                   std::size_t count, const double* xi, double* dst) {
  for (std::size_t c = 0; c < count; ++c) {
    const std::size_t k = k0 + c;
    double acc[kW] = {};
    for (std::uint32_t t = ptr[k]; t < ptr[k + 1]; ++t) {
      const double* x = xi + static_cast<std::size_t>(patch[t]) * kW;
      const double v = value[t];
      for (std::size_t p = 0; p < kW; ++p) acc[p] += v * x[p];
    }
    double* o = dst + c * kW;
    for (std::size_t p = 0; p < kW; ++p) o[p] = acc[p];
  }
}

// out_row += scale * B u on one row, from s1 on rows i - 1, i, i + 1 and s2 on row i.
PATCHDIFF_KERNEL
void transport_kernel(int n, const double* s1c, const double* s1e, const double* s1w, const double* s2,
                      const double* uc, const double* ue, const double* uw, double scale, double* out_row) {
  for (int j = 0; j < n; ++j) {
    const std::size_t jc = static_cast<std::size_t>(j) * kW;
    const std::size_t jn = static_cast<std::size_t>(j + 1 == n ? 0 : j + 1) * kW;
    const std::size_t js = static_cast<std::size_t>(j == 0 ? n - 1 : j - 1) * kW;
    const double* a = s1c + jc;
    const double* ae = s1e + jc;
    const double* aw = s1w + jc;
    const double* b = s2 + jc;
    const double* bn = s2 + jn;
    const double* bs = s2 + js;
    const double* pe = ue + jc;
    const double* pw = uw + jc;
    const double* pn = uc + jn;
    const double* ps = uc + js;
    double* o = out_row + jc;
    for (std::size_t p = 0; p < kW; ++p) {
      o[p] += scale * ((a[p] + ae[p]) * pe[p] - (a[p] + aw[p]) * pw[p] + (b[p] + bn[p]) * pn[p] -
                       (b[p] + bs[p]) * ps[p]);
    }
  }
}

}  // namespace

template <std::size_t Fixed>
void ItoStepper::apply_drift(const double* u, double* out, std::size_t width) const {
  const std::size_t P = Fixed ? Fixed : width;
  const std::size_t m = grid_.size();
  if constexpr (Fixed == kW) {
    drift_kernel(nbr_.front().data(), coef_.front().data(), m, u, 0.0, out);
    return;
  }
  for (std::size_t k = 0; k < m; ++k) {
    const auto& nb = nbr_[k];
    const auto& cf = coef_[k];
    double* o = out + k * P;
    for (std::size_t p = 0; p < P; ++p) o[p] = 0.0;
    for (int s = 0; s < kStencil; ++s) {
      const double w = cf[static_cast<std::size_t>(s)];
      if (w == 0.0) continue;
      const double* un = u + static_cast<std::size_t>(nb[static_cast<std::size_t>(s)]) * P;
      for (std::size_t p = 0; p < P; ++p) o[p] += w * un[p];
    }
  }
}

template <std::size_t Fixed>
void ItoStepper::accumulate_row(int r, const double* xi, std::size_t width, double* first, double* second) const {
  const std::size_t P = Fixed ? Fixed : width;
  const int n = grid_.n();
  const std::size_t row = static_cast<std::size_t>(positive_mod(r, n)) * static_cast<std::size_t>(n);
  const std::size_t len = static_cast<std::size_t>(n) * P;
  if constexpr (Fixed == kW) {
    if (form_ == PatchForm::Curl) {
      stream_kernel(inc_ptr_.data(), inc_patch_.data(), inc_value_.data(), row, static_cast<std::size_t>(n), xi, first);
      return;
    }
  }
  std::fill(first, first + len, 0.0);
  if (second) std::fill(second, second + len, 0.0);
  for (int j = 0; j < n; ++j) {
    const std::size_t k = row + static_cast<std::size_t>(j);
    double* a = first + static_cast<std::size_t>(j) * P;
    double* b = second ? second + static_cast<std::size_t>(j) * P : nullptr;
    if (form_ == PatchForm::Curl) {
      for (std::uint32_t t = inc_ptr_[k]; t < inc_ptr_[k + 1]; ++t) {
        const double* x = xi + static_cast<std::size_t>(inc_patch_[t]) * P;
        const double v = inc_value_[t];
        for (std::size_t p = 0; p < P; ++p) a[p] += v * x[p];
      }
    } else {
      for (std::uint32_t t = inc_ptr_[k]; t < inc_ptr_[k + 1]; ++t) {
        const double* x = xi + static_cast<std::size_t>(inc_patch_[t]) * P;
        const double v1 = inc_s1_[t], v2 = inc_s2_[t];
        for (std::size_t p = 0; p < P; ++p) {
          a[p] += v1 * x[p];
          b[p] += v2 * x[p];
        }
      }
    }
  }
}

// Streams over rows, keeping the sampled noise field for rows i - 1, i, i + 1 in ring buffers.
template <std::size_t Fixed>
void ItoStepper::add_noise(const double* u, const double* xi, double* out, std::size_t width) const {
  const std::size_t P = Fixed ? Fixed : width;
  const int n = grid_.n();
  const std::size_t len = static_cast<std::size_t>(n) * P;
  const bool curl = form_ == PatchForm::Curl;
  thread_local std::vector<double> psi_ring, s1_ring, s2_ring, s2_row;
  psi_ring.resize(3 * len);
  s1_ring.resize(3 * len);
  s2_ring.resize(3 * len);
  s2_row.resize(len);
  auto slot = [&](std::vector<double>& ring, int r) { return ring.data() + static_cast<std::size_t>((r + 3) % 3) * len; };
  const double h = 0.5 * n;

  // Row r of s1 (and s2 for the sampled form) once row r of the stream function is known.
  auto load_row = [&](int r) {
    if (curl) {
      double* ps = slot(psi_ring, r);
      accumulate_row<Fixed>(r, xi, P, ps, nullptr);
      double* a = slot(s1_ring, r);
      for (int j = 0; j < n; ++j) {
        const double* pn = ps + static_cast<std::size_t>(positive_mod(j + 1, n)) * P;
        const double* pw = ps + static_cast<std::size_t>(positive_mod(j - 1, n)) * P;
        double* aj = a + static_cast<std::size_t>(j) * P;
        for (std::size_t p = 0; p < P; ++p) aj[p] = -h * (pn[p] - pw[p]);
      }
    } else {
      accumulate_row<Fixed>(r, xi, P, slot(s1_ring, r), slot(s2_ring, r));
    }
  };

  const double scale = std::sqrt(2.0 * dt_) * 0.25 * n;
  load_row(-1);
  load_row(0);
  for (int i = 0; i < n; ++i) {
    load_row(i + 1);
    const double* s2;
    if (curl) {
      const double* pe = slot(psi_ring, i + 1);
      const double* pw = slot(psi_ring, i - 1);
      for (std::size_t t = 0; t < len; ++t) s2_row[t] = h * (pe[t] - pw[t]);
      s2 = s2_row.data();
    } else {
      s2 = slot(s2_ring, i);
    }
    const double* s1c = slot(s1_ring, i);
    const double* s1e = slot(s1_ring, i + 1);
    const double* s1w = slot(s1_ring, i - 1);
    const std::size_t ue_row = static_cast<std::size_t>(positive_mod(i + 1, n)) * len;
    const std::size_t uw_row = static_cast<std::size_t>(positive_mod(i - 1, n)) * len;
    const std::size_t uc_row = static_cast<std::size_t>(i) * len;
    if constexpr (Fixed == kW) {
      transport_kernel(n, s1c, s1e, s1w, s2, u + uc_row, u + ue_row, u + uw_row, scale, out + uc_row);
      continue;
    }
    for (int j = 0; j < n; ++j) {
      const std::size_t jc = static_cast<std::size_t>(j) * P;
      const std::size_t jn = static_cast<std::size_t>(positive_mod(j + 1, n)) * P;
      const std::size_t js = static_cast<std::size_t>(positive_mod(j - 1, n)) * P;
      const double* a = s1c + jc;
      const double* ae = s1e + jc;
      const double* aw = s1w + jc;
      const double* b = s2 + jc;
      const double* bn = s2 + jn;
      const double* bs = s2 + js;
      const double* ue = u + ue_row + jc;
      const double* uw = u + uw_row + jc;
      const double* un = u + uc_row + jn;
      const double* us = u + uc_row + js;
      double* o = out + uc_row + jc;
      for (std::size_t p = 0; p < P; ++p) {
        o[p] += scale * ((a[p] + ae[p]) * ue[p] - (a[p] + aw[p]) * uw[p] + (b[p] + bn[p]) * un[p] -
                         (b[p] + bs[p]) * us[p]);
      }
    }
  }
}

ScalarField2D ItoStepper::drift(const ScalarField2D& u) const {
  if (!(u.grid == grid_)) throw PreconditionError("ItoStepper::drift: grid mismatch");
  ScalarField2D out(grid_);
  apply_drift<1>(u.values.data(), out.values.data(), 1);
  return out;
}

void ItoStepper::step_batch(std::vector<double>& u, std::vector<std::mt19937_64>& rngs) const {
  const std::size_t P = rngs.size();
  const std::size_t m = grid_.size();
  if (P == 0 || u.size() != m * P) throw PreconditionError("ItoStepper::step_batch: state size mismatch");
  thread_local std::vector<double> xi, next;
  xi.resize(n_patches_ * P);
  std::normal_distribution<double> gauss;
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t k = 0; k < n_patches_; ++k) xi[k * P + p] = gauss(rngs[p]);

  next.resize(m * P);
  if (P == kBatchWidth) {
    drift_kernel(nbr_.front().data(), coef_.front().data(), m, u.data(), dt_, next.data());
  } else {
    apply_drift<0>(u.data(), next.data(), P);
    for (std::size_t t = 0; t < m * P; ++t) next[t] = u[t] + dt_ * next[t];
  }
  if (n_patches_ > 0) {
    if (P == kBatchWidth) {
      add_noise<kBatchWidth>(u.data(), xi.data(), next.data(), P);
    } else {
      add_noise<0>(u.data(), xi.data(), next.data(), P);
    }
  }
  u.swap(next);
}

ScalarField2D ItoStepper::step(const ScalarField2D& u, std::mt19937_64& rng) const {
  if (!(u.grid == grid_)) throw PreconditionError("ItoStepper::step: grid mismatch");
  std::vector<double> state(u.values.data(), u.values.data() + u.values.size());
  std::vector<std::mt19937_64> rngs{rng};
  step_batch(state, rngs);
  rng = rngs[0];
  return ScalarField2D(grid_, Eigen::Map<Eigen::VectorXd>(state.data(), static_cast<Eigen::Index>(state.size())));
}

ScalarField2D step_ito(const ScalarField2D& u, double dt, double kappa, const PatchFamily& family,
                       std::mt19937_64& rng) {
  return ItoStepper(family, kappa, dt).step(u, rng);
}

// ---------------------------------------------------------------------------
// Ensembles

Ensemble simulate(const ScalarField2D& u0, double T_end, const NoiseConfig& config, const PatchFamily& family,
                  double kappa, const std::vector<ScalarField2D>& test_functions) {
  if (!(u0.grid == family.grid)) throw PreconditionError("simulate: initial datum grid mismatch");
  for (const auto& f : test_functions)
    if (!(f.grid == family.grid)) throw PreconditionError("simulate: test function grid mismatch");
  if (!(T_end > 0.0) || !std::isfinite(T_end)) throw ConfigurationError("simulate: T_end must be > 0");
  if (config.paths < 1) throw ConfigurationError("simulate: paths must be >= 1");
  if (config.samples < 1) throw ConfigurationError("simulate: samples must be >= 1");
  if (config.threads < 1) throw ConfigurationError("simulate: threads must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();

  const double bound = max_stable_dt(family, kappa);
  long steps = 0;
  double dt = config.dt;
  if (dt == 0.0) {
    steps = static_cast<long>(std::ceil(T_end / bound));
    dt = T_end / static_cast<double>(steps);
  } else {
    steps = static_cast<long>(std::ceil(T_end / dt - 1e-9));
  }
  const ItoStepper stepper(family, kappa, dt);

  std::vector<long> sample_steps;
  for (int s = 0; s <= config.samples; ++s) {
    const long k = std::lround(static_cast<double>(s) * static_cast<double>(steps) / config.samples);
    if (sample_steps.empty() || k != sample_steps.back()) sample_steps.push_back(k);
  }

  Ensemble ens;
  ens.c = family.patches.empty() ? 0.0 : family.params.c;
  ens.kappa = kappa;
  ens.N = family.N;
  ens.dt = dt;
  ens.seed = config.seed;
  for (long k : sample_steps) ens.times.push_back(static_cast<double>(k) * dt);
  const std::size_t P = static_cast<std::size_t>(config.paths);
  const std::size_t T = sample_steps.size();
  ens.obs.assign(test_functions.size(), std::vector<std::vector<double>>(P, std::vector<double>(T, 0.0)));
  ens.energy.assign(P, std::vector<double>(T, 0.0));

  const std::size_t m = family.grid.size();
  const double inv_m = 1.0 / static_cast<double>(m);
  constexpr std::size_t kBlock = ItoStepper::kBatchWidth;

  auto run_block = [&](std::size_t first, std::size_t count) {
    std::vector<std::mt19937_64> rngs;
    for (std::size_t p = first; p < first + count; ++p) {
      std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                        static_cast<std::uint32_t>(p), 0x5eedu};
      rngs.emplace_back(seq);
    }
    std::vector<double> u(m * count);
    for (std::size_t k = 0; k < m; ++k)
      for (std::size_t p = 0; p < count; ++p) u[k * count + p] = u0.values[static_cast<Eigen::Index>(k)];
    auto record = [&](std::size_t slot) {
      for (std::size_t p = 0; p < count; ++p) {
        double e = 0.0;
        for (std::size_t k = 0; k < m; ++k) e += u[k * count + p] * u[k * count + p];
        ens.energy[first + p][slot] = e * inv_m;
        for (std::size_t f = 0; f < test_functions.size(); ++f) {
          const auto& phi = test_functions[f].values;
          double s = 0.0;
          for (std::size_t k = 0; k < m; ++k) s += u[k * count + p] * phi[static_cast<Eigen::Index>(k)];
          ens.obs[f][first + p][slot] = s * inv_m;
        }
      }
    };
    record(0);
    long done = 0;
    for (std::size_t slot = 1; slot < T; ++slot) {
      for (; done < sample_steps[slot]; ++done) stepper.step_batch(u, rngs);
      record(slot);
    }
  };

  std::vector<std::pair<std::size_t, std::size_t>> blocks;
  for (std::size_t f = 0; f < P; f += kBlock) blocks.emplace_back(f, std::min(kBlock, P - f));
  const int width = std::min<int>(config.threads, static_cast<int>(blocks.size()));
  if (width <= 1) {
    for (const auto& b : blocks) run_block(b.first, b.second);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (int t = 0; t < width; ++t)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < blocks.size(); i = next++) run_block(blocks[i].first, blocks[i].second);
      });
  }
  ens.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return ens;
}

ScalarField2D sample_trig(const Grid2D& grid, const std::vector<TrigTerm>& terms) {
  return heat_evolve(grid, terms, 0.0, 0.0);
}

ScalarField2D heat_evolve(const Grid2D& grid, const std::vector<TrigTerm>& terms, double C, double t) {
  ScalarField2D out(grid);
  const double two_pi = 2.0 * std::numbers::pi;
  for (const auto& term : terms) {
    const double decay = std::exp(-two_pi * two_pi * (term.m1 * term.m1 + term.m2 * term.m2) * C * t);
    for (int i = 0; i < grid.n(); ++i)
      for (int j = 0; j < grid.n(); ++j) {
        const auto x = grid.position(i, j);
        const double arg = two_pi * (term.m1 * x[0] + term.m2 * x[1]);
        out(i, j) += decay * (term.a * std::cos(arg) + term.b * std::sin(arg));
      }
  }
  return out;
}

ErrorCurve compare_homogenized(const Ensemble& ensemble, const HomogenizedReference& ref,
                               const std::vector<TrigTerm>& u0, const ScalarField2D& phi, std::size_t test_index) {
  auto differs = [](double a, double b) { return std::abs(a - b) > 1e-12 * std::max(std::abs(a), std::abs(b)); };
  if (differs(ensemble.c, ref.c) || differs(ensemble.kappa, ref.kappa))
    throw DataError("compare_homogenized: ensemble (c=" + fmt17(ensemble.c) + ", kappa=" + fmt17(ensemble.kappa) +
                    ") does not match the reference (c=" + fmt17(ref.c) + ", kappa=" + fmt17(ref.kappa) + ")");
  if (test_index >= ensemble.obs.size()) throw PreconditionError("compare_homogenized: no such test function");
  const auto& obs = ensemble.obs[test_index];
  ErrorCurve out;
  out.times = ensemble.times;
  for (std::size_t s = 0; s < ensemble.times.size(); ++s) {
    const ScalarField2D ubar = heat_evolve(phi.grid, u0, ref.C_eff, ensemble.times[s]);
    const double target = ubar.values.dot(phi.values) / static_cast<double>(phi.grid.size());
    double acc = 0.0;
    for (const auto& path : obs) acc += (path[s] - target) * (path[s] - target);
    const double mse = acc / static_cast<double>(obs.size());
    out.mse.push_back(mse);
    out.sup = std::max(out.sup, mse);
  }
  return out;
}

void write_ensemble_csv(std::ostream& os, const Ensemble& e) {
  os << "time";
  for (std::size_t f = 0; f < e.obs.size(); ++f) os << ",mean_obs_" << f << ",var_obs_" << f;
  os << ",mean_energy\n";
  const std::size_t P = e.energy.size();
  for (std::size_t s = 0; s < e.times.size(); ++s) {
    os << fmt17(e.times[s]);
    for (const auto& obs : e.obs) {
      double mean = 0.0;
      for (const auto& path : obs) mean += path[s];
      mean /= static_cast<double>(P);
      double var = 0.0;
      for (const auto& path : obs) var += (path[s] - mean) * (path[s] - mean);
      var = P > 1 ? var / static_cast<double>(P - 1) : 0.0;
      os << ',' << fmt17(mean) << ',' << fmt17(var);
    }
    double en = 0.0;
    for (const auto& path : e.energy) en += path[s];
    os << ',' << fmt17(en / static_cast<double>(P)) << '\n';
  }
}

}  // namespace patchdiff
