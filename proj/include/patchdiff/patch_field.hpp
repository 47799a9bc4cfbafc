#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <vector>

#include "patchdiff/grid.hpp"

namespace patchdiff {

/// Radial vortex-patch profile and its normalization.
///
/// The profile is phi(r) = r^-2 exp(-a1 / r^2) exp(-a2 r^2 / |r - c|) on 0 < r < c and zero
/// elsewhere. `norm` is the L2 norm over the plane of the unnormalized field
/// x_perp / |x| * phi(|x|); dividing by it gives a unit-energy patch when lambda = 1.
struct PatchParams {
  double c = 1.0;
  double a1 = 0.05;
  double a2 = 0.3;
  double lambda = 1.0;
  double norm = 0.0;

  void validate() const;
  bool normalized() const noexcept { return norm > 0.0; }
};

inline constexpr int kDefaultQuadPanels = 4096;

/// Validated, normalized parameters.
PatchParams make_patch_params(double c, double a1 = 0.05, double a2 = 0.3, double lambda = 1.0,
                              int quad_n = kDefaultQuadPanels);

double profile_phi(double r, const PatchParams& p);

/// sqrt(2 pi int_0^c r f(r)^2 dr) by composite Simpson on quad_n panels.
double radial_l2_norm(const std::function<double(double)>& f, double c, int quad_n);

/// Norm of the unnormalized patch field (lambda is not included).
double compute_norm(const PatchParams& p, int quad_n);

/// lambda * x_perp / |x| * phi(|x|) / norm, with x_perp = (-x2, x1).
std::array<double, 2> grad_perp_psi(std::array<double, 2> x, const PatchParams& p);

/// Half-width of the lattice summation box, K = ceil(c) + 1.
int summation_half_width(double c);

/// A^N(x) = sum_k sigma_k^N(x) (x) sigma_k^N(x) on every node, with sigma_k^N(x) = grad_perp_psi(N x - k)
/// (patch spacing 1/N, radius and intensity both scaled by 1/N). N = 1 gives the cell field A(x).
SymMatrixField assemble_A(const Grid2D& grid, const PatchParams& p, int lattice_N = 1);

enum class SupportLabel : unsigned char { Zero, RankDeficient, FullRank };

struct SupportClassification {
  std::vector<SupportLabel> labels;  // one per node, flat grid order
  std::size_t zero = 0;
  std::size_t rank_deficient = 0;
  std::size_t full_rank = 0;
  double tol_rank = 0.0;
  double max_eigenvalue = 0.0;
  double min_eigenvalue = 0.0;  // smallest eigenvalue over the grid
};

inline constexpr double kRankTolerance = 1e-10;

SupportClassification classify_support(const SymMatrixField& A, double relative_tol = kRankTolerance);

/// Eigenvalues (ascending) of the symmetric 2x2 matrix [[a, b], [b, c]].
std::array<double, 2> sym2_eigenvalues(double a, double b, double c);

/// The eight linear isometries of Z^2 (dihedral group generated by the quarter turn and diag(1, -1)).
enum class Isometry : int {
  Identity = 0,
  Rot90,
  Rot180,
  Rot270,
  ReflectX2,    // diag(1, -1)
  ReflectX1,    // diag(-1, 1)
  ReflectDiag,  // swap axes
  ReflectAnti,  // (x1, x2) -> (-x2, -x1)
};

inline constexpr std::array<Isometry, 8> kAllIsometries = {
    Isometry::Identity,  Isometry::Rot90,     Isometry::Rot180,      Isometry::Rot270,
    Isometry::ReflectX2, Isometry::ReflectX1, Isometry::ReflectDiag, Isometry::ReflectAnti};

Eigen::Matrix2i isometry_matrix(Isometry R);
const char* isometry_name(Isometry R);

/// Node permutation x -> R(x - j) + j, j = (1/2, 1/2), as a flat-index map. Requires even n.
std::vector<std::size_t> isometry_node_map(const Grid2D& grid, Isometry R);

/// max over nodes of |A(R~x) - R^J A(x) (R^J)^T|_inf, with R^J = J R J^T.
double verify_isometry_symmetry(const SymMatrixField& A, Isometry R);

/// Apply the isometry to a matrix field: B(R~x) = R^J A(x) (R^J)^T.
SymMatrixField transform_field(const SymMatrixField& A, Isometry R);

struct ConeLemmaOptions {
  /// Require the chosen corner to lie within sqrt(5)/2 of x.
  bool distance_filter = true;
};

struct ConeLemmaReport {
  bool holds = false;
  double worst_margin = 0.0;  // min over (x, v) of max over admissible corners of |cos| - 1/sqrt(2)
  std::array<double, 2> worst_x{};
  std::array<double, 2> worst_v{};
  std::size_t failures = 0;
};

/// Best margin over the corners {0,1}^2 for one (x, v) pair; -inf when no corner is admissible.
double cone_margin(std::array<double, 2> x, std::array<double, 2> v, const ConeLemmaOptions& opt = {});

/// Brute force over x_i = i / n_x in [0,1)^2 and v_m = angle 2 pi m / n_angle.
ConeLemmaReport verify_cone_lemma(int n_x, int n_angle, const ConeLemmaOptions& opt = {});

/// CSV dump with columns i, j, x1, x2, a11, a12, a22.
void write_field_csv(std::ostream& os, const SymMatrixField& A);

}  // namespace patchdiff
