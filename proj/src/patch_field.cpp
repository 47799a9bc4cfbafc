#include "patchdiff/patch_field.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>

namespace patchdiff {

namespace {

// Exponents below this underflow to zero in double precision.
constexpr double kExpFloor = -745.0;

bool finite_positive(double v) { return std::isfinite(v) && v > 0.0; }

}  // namespace

void PatchParams::validate() const {
  if (!finite_positive(c)) throw DomainError("PatchParams: c must be finite and > 0");
  if (!(a1 > 0.0) || std::isnan(a1)) throw DomainError("PatchParams: a1 must be > 0");
  if (!(a2 > 0.0) || std::isnan(a2)) throw DomainError("PatchParams: a2 must be > 0");
  if (!finite_positive(lambda)) throw DomainError("PatchParams: lambda must be finite and > 0");
}

double profile_phi(double r, const PatchParams& p) {
  if (!std::isfinite(r)) throw DomainError("profile_phi: non-finite radius");
  if (r < 0.0) throw DomainError("profile_phi: negative radius");
  if (r == 0.0 || r >= p.c) return 0.0;
  const double r2 = r * r;
  const double exponent = -p.a1 / r2 - p.a2 * r2 / (p.c - r);
  if (!(exponent > kExpFloor)) return 0.0;
  return std::exp(exponent) / r2;
}

double radial_l2_norm(const std::function<double(double)>& f, double c, int quad_n) {
  if (quad_n < 2) throw PreconditionError("radial_l2_norm: need at least 2 panels");
  const int panels = quad_n + (quad_n % 2);  // Simpson needs an even count
  const double h = c / panels;
  auto g = [&](double r) {
    const double v = f(r);
    return r * v * v;
  };
  double acc = g(0.0) + g(c);
  for (int k = 1; k < panels; ++k) acc += (k % 2 ? 4.0 : 2.0) * g(k * h);
  const double integral = acc * h / 3.0;
  return std::sqrt(2.0 * std::numbers::pi * integral);
}

double compute_norm(const PatchParams& p, int quad_n) {
  p.validate();
  if (quad_n < 256) throw PreconditionError("compute_norm: quad_n must be >= 256");
  const double norm = radial_l2_norm([&](double r) { return profile_phi(r, p); }, p.c, quad_n);
  if (!(norm > 0.0) || !std::isfinite(norm))
    throw ConfigurationError("compute_norm: profile vanishes identically (a1=" + std::to_string(p.a1) +
                             ", a2=" + std::to_string(p.a2) + ", c=" + std::to_string(p.c) + ")");
  return norm;
}

PatchParams make_patch_params(double c, double a1, double a2, double lambda, int quad_n) {
  PatchParams p{c, a1, a2, lambda, 0.0};
  p.validate();
  p.norm = compute_norm(p, quad_n);
  return p;
}

std::array<double, 2> grad_perp_psi(std::array<double, 2> x, const PatchParams& p) {
  if (!std::isfinite(x[0]) || !std::isfinite(x[1])) throw DomainError("grad_perp_psi: non-finite point");
  const double r = std::hypot(x[0], x[1]);
  if (r == 0.0 || r >= p.c) return {0.0, 0.0};
  const double s = p.lambda * profile_phi(r, p) / (p.norm * r);
  return {-x[1] * s, x[0] * s};
}

int summation_half_width(double c) { return static_cast<int>(std::ceil(c)) + 1; }

SymMatrixField assemble_A(const Grid2D& grid, const PatchParams& p, int lattice_N) {
  p.validate();
  if (!p.normalized()) throw PreconditionError("assemble_A: patch norm not computed");
  if (lattice_N < 1) throw PreconditionError("assemble_A: lattice_N must be >= 1");

  SymMatrixField A(grid);
  const int n = grid.n();
  const int K = summation_half_width(p.c);
  const double c2 = p.c * p.c;
  const double N = lattice_N;

  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const auto x = grid.position(i, j);
      const double y1 = N * x[0];
      const double y2 = N * x[1];
      double s11 = 0.0, s12 = 0.0, s22 = 0.0;
      for (int k1 = -K; k1 <= lattice_N + K; ++k1) {
        const double z1 = y1 - k1;
        if (z1 * z1 >= c2) continue;
        for (int k2 = -K; k2 <= lattice_N + K; ++k2) {
          const double z2 = y2 - k2;
          if (z1 * z1 + z2 * z2 >= c2) continue;
          const auto s = grad_perp_psi({z1, z2}, p);
          s11 += s[0] * s[0];
          s12 += s[0] * s[1];
          s22 += s[1] * s[1];
        }
      }
      const auto k = static_cast<Eigen::Index>(grid.index(i, j));
      A.a11.values[k] = s11;
      A.a12.values[k] = s12;
      A.a22.values[k] = s22;
    }
  }
  return A;
}

std::array<double, 2> sym2_eigenvalues(double a, double b, double c) {
  const double mean = 0.5 * (a + c);
  const double rad = std::hypot(0.5 * (a - c), b);
  const double hi = mean + rad;
  // Recover the small eigenvalue from the determinant to avoid cancellation.
  const double lo = hi > 0.0 ? (a * c - b * b) / hi : mean - rad;
  return {std::min(lo, hi), std::max(lo, hi)};
}

SupportClassification classify_support(const SymMatrixField& A, double relative_tol) {
  const std::size_t m = A.grid().size();
  SupportClassification out;
  out.labels.resize(m);
  std::vector<std::array<double, 2>> eig(m);
  double max_eig = 0.0;
  double min_eig = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < m; ++k) {
    const auto e = static_cast<Eigen::Index>(k);
    eig[k] = sym2_eigenvalues(A.a11.values[e], A.a12.values[e], A.a22.values[e]);
    max_eig = std::max(max_eig, eig[k][1]);
    min_eig = std::min(min_eig, eig[k][0]);
  }
  out.max_eigenvalue = max_eig;
  out.min_eigenvalue = min_eig;
  out.tol_rank = relative_tol * max_eig;
  for (std::size_t k = 0; k < m; ++k) {
    const bool small_lo = eig[k][0] < out.tol_rank;
    const bool small_hi = eig[k][1] < out.tol_rank;
    if (small_lo && small_hi) {
      out.labels[k] = SupportLabel::Zero;
      ++out.zero;
    } else if (small_lo || small_hi) {
      out.labels[k] = SupportLabel::RankDeficient;
      ++out.rank_deficient;
    } else {
      out.labels[k] = SupportLabel::FullRank;
      ++out.full_rank;
    }
  }
  return out;
}

Eigen::Matrix2i isometry_matrix(Isometry R) {
  Eigen::Matrix2i m;
  switch (R) {
    case Isometry::Identity: m << 1, 0, 0, 1; break;
    case Isometry::Rot90: m << 0, -1, 1, 0; break;
    case Isometry::Rot180: m << -1, 0, 0, -1; break;
    case Isometry::Rot270: m << 0, 1, -1, 0; break;
    case Isometry::ReflectX2: m << 1, 0, 0, -1; break;
    case Isometry::ReflectX1: m << -1, 0, 0, 1; break;
    case Isometry::ReflectDiag: m << 0, 1, 1, 0; break;
    case Isometry::ReflectAnti: m << 0, -1, -1, 0; break;
  }
  return m;
}

const char* isometry_name(Isometry R) {
  switch (R) {
    case Isometry::Identity: return "identity";
    case Isometry::Rot90: return "rot90";
    case Isometry::Rot180: return "rot180";
    case Isometry::Rot270: return "rot270";
    case Isometry::ReflectX2: return "reflect_x2";
    case Isometry::ReflectX1: return "reflect_x1";
    case Isometry::ReflectDiag: return "reflect_diag";
    case Isometry::ReflectAnti: return "reflect_anti";
  }
  return "?";
}

std::vector<std::size_t> isometry_node_map(const Grid2D& grid, Isometry R) {
  const int n = grid.n();
  if (n % 2 != 0) throw PreconditionError("isometry symmetry check needs an even grid size, got n=" + std::to_string(n));
  const Eigen::Matrix2i M = isometry_matrix(R);
  const int h = n / 2;
  std::vector<std::size_t> map(grid.size());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const int p1 = i - h, p2 = j - h;
      const int q1 = M(0, 0) * p1 + M(0, 1) * p2 + h;
      const int q2 = M(1, 0) * p1 + M(1, 1) * p2 + h;
      map[grid.index(i, j)] = grid.index(q1, q2);
    }
  }
  return map;
}

namespace {

Eigen::Matrix2d conjugated_isometry(Isometry R) {
  Eigen::Matrix2d J;
  J << 0.0, 1.0, -1.0, 0.0;
  const Eigen::Matrix2d Rd = isometry_matrix(R).cast<double>();
  return J * Rd * J.transpose();
}

}  // namespace

SymMatrixField transform_field(const SymMatrixField& A, Isometry R) {
  const auto map = isometry_node_map(A.grid(), R);
  const Eigen::Matrix2d Q = conjugated_isometry(R);
  SymMatrixField B(A.grid());
  for (std::size_t k = 0; k < map.size(); ++k) {
    const Eigen::Matrix2d m = Q * A.at(k) * Q.transpose();
    const auto t = static_cast<Eigen::Index>(map[k]);
    B.a11.values[t] = m(0, 0);
    B.a12.values[t] = 0.5 * (m(0, 1) + m(1, 0));
    B.a22.values[t] = m(1, 1);
  }
  return B;
}

double verify_isometry_symmetry(const SymMatrixField& A, Isometry R) {
  const auto map = isometry_node_map(A.grid(), R);
  const Eigen::Matrix2d Q = conjugated_isometry(R);
  double worst = 0.0;
  for (std::size_t k = 0; k < map.size(); ++k) {
    const Eigen::Matrix2d expected = Q * A.at(k) * Q.transpose();
    const Eigen::Matrix2d actual = A.at(map[k]);
    worst = std::max(worst, (actual - expected).cwiseAbs().maxCoeff());
  }
  return worst;
}

double cone_margin(std::array<double, 2> x, std::array<double, 2> v, const ConeLemmaOptions& opt) {
  static constexpr std::array<std::array<int, 2>, 4> corners{{{0, 0}, {1, 0}, {0, 1}, {1, 1}}};
  const double max_dist = std::sqrt(5.0) / 2.0;
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& k : corners) {
    const double y1 = x[0] - k[0];
    const double y2 = x[1] - k[1];
    const double r = std::hypot(y1, y2);
    if (r == 0.0) continue;
    if (opt.distance_filter && r > max_dist) continue;
    const double cosine = std::abs(v[0] * (-y2) + v[1] * y1) / r;
    best = std::max(best, cosine - std::numbers::sqrt2 / 2.0);
  }
  return best;
}

ConeLemmaReport verify_cone_lemma(int n_x, int n_angle, const ConeLemmaOptions& opt) {
  if (n_x < 64) throw PreconditionError("verify_cone_lemma: n_x must be >= 64");
  if (n_angle < 180) throw PreconditionError("verify_cone_lemma: n_angle must be >= 180");
  ConeLemmaReport rep;
  rep.worst_margin = std::numeric_limits<double>::infinity();
  std::vector<std::array<double, 2>> dirs(static_cast<std::size_t>(n_angle));
  for (int m = 0; m < n_angle; ++m) {
    const double th = 2.0 * std::numbers::pi * m / n_angle;
    dirs[static_cast<std::size_t>(m)] = {std::cos(th), std::sin(th)};
  }
  for (int i = 0; i < n_x; ++i) {
    for (int j = 0; j < n_x; ++j) {
      const std::array<double, 2> x{static_cast<double>(i) / n_x, static_cast<double>(j) / n_x};
      for (const auto& v : dirs) {
        const double m = cone_margin(x, v, opt);
        if (!(m > 0.0)) ++rep.failures;
        if (m < rep.worst_margin) {
          rep.worst_margin = m;
          rep.worst_x = x;
          rep.worst_v = v;
        }
      }
    }
  }
  rep.holds = rep.failures == 0;
  return rep;
}

void write_field_csv(std::ostream& os, const SymMatrixField& A) {
  const Grid2D& g = A.grid();
  const auto old_prec = os.precision(17);
  os << "i,j,x1,x2,a11,a12,a22\n";
  for (int i = 0; i < g.n(); ++i) {
    for (int j = 0; j < g.n(); ++j) {
      const auto x = g.position(i, j);
      const auto k = static_cast<Eigen::Index>(g.index(i, j));
      os << i << ',' << j << ',' << x[0] << ',' << x[1] << ',' << A.a11.values[k] << ',' << A.a12.values[k] << ','
         << A.a22.values[k] << '\n';
    }
  }
  os.precision(old_prec);
}

}  // namespace patchdiff
