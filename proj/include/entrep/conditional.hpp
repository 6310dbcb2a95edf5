#pragma once

#include "entrep/lattice.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace entrep {

/// The finite-range stencil of J_eps = q(eps I - Delta): offsets with
/// |o|_1 <= K and their weights, including the diagonal entry J(0,0).
struct JStencil {
  int d = 0;
  int K = 0;
  double diagonal = 0.0;
  std::vector<std::vector<int>> offsets;  // non-zero offsets only
  std::vector<double> weights;

  static JStencil build(const QPolynomial& q, int d, double eps);
};

/// A box B(x) of side L_box around `center` and its K-thick boundary:
///   B  = {y : max_i |y_i - c_i| <  (L_box - K)/2}
///   dB = {y : max_i |y_i - c_i| in [(L_box - K)/2, (L_box + K)/2]}
/// Sites are stored as offsets from the center, lexicographically ordered.
struct BoxGeometry {
  std::vector<int> center;
  int L_box = 0;
  int K = 0;
  int inner_radius = 0;  // sup-norm radius of B
  int outer_radius = 0;  // sup-norm radius of B u dB
  std::vector<std::vector<int>> interior;
  std::vector<std::vector<int>> boundary;

  int d() const { return static_cast<int>(center.size()); }
  /// Index of the center within `interior`.
  std::size_t center_index() const;
};

/// Validates L_box > K+1 and L_box - K even.
BoxGeometry make_box(std::vector<int> center, int L_box, int K);

/// Unchecked geometry with B of sup-radius `inner_radius` and boundary shells
/// up to `outer_radius`; used to build cuts thinner than the operator range.
BoxGeometry make_shell_geometry(std::vector<int> center, int inner_radius, int outer_radius, int K);

struct ConditionalLaw {
  BoxGeometry geometry;
  std::vector<double> mean;  // m_y for y in B, ordered as geometry.interior
  double center_variance = 0.0;  // G_L
  int cg_iterations = 0;
  double cg_residual = 0.0;
};

/// The law of phi_B given phi on dB (equivalently on the whole complement of
/// B): mean solves J_BB m = -J_{B,dB} phi_dB; G_L = (J_BB^{-1})(c,c). Sparse
/// Jacobi-preconditioned CG to relative residual `tol`.
ConditionalLaw conditional_law(const QPolynomial& q, const TorusGrid& grid, const BoxGeometry& geometry,
                               std::span<const double> boundary_values, double tol = 1e-10);
/// Boundary values read from a field on the ambient torus.
ConditionalLaw conditional_law(const QPolynomial& q, const BoxGeometry& geometry, const LatticeField& field,
                               double tol = 1e-10);

struct GLRow {
  int L_box = 0;
  double g_l = 0.0;
  int cg_iterations = 0;
};

struct GLCurve {
  std::vector<GLRow> rows;
  bool increasing = true;  // diagnostic only
  double reference = 0.0;  // G(0,0) used for the gaps, 0 when not supplied
  /// |G_L - reference| per row; empty without a reference.
  std::vector<double> gaps;
  bool gaps_decreasing = true;
};

/// G_L for each box size with the exterior beyond dB pinned to zero.
GLCurve g_l_curve(const QPolynomial& q, int d, const std::vector<int>& L_boxes, double eps = 0.0,
                  double reference = 0.0);

struct SingleSiteLaw {
  double mean = 0.0;
  double variance = 0.0;
};

/// Law of phi_x given all other sites:
///   variance = 1/J(0,0), mean = -(1/J(0,0)) sum_{y != x} J(x,y) phi_y.
SingleSiteLaw single_site_law(const QPolynomial& q, const LatticeField& field, std::span<const int> x);

/// Gauss-Seidel on the interior of a box with dB fixed from `field`: repeated
/// single-site mean updates; returns the interior values.
std::vector<double> gauss_seidel_interior(const QPolynomial& q, const BoxGeometry& geometry, const LatticeField& field,
                                          double tol = 1e-12, int max_sweeps = 100000, int* sweeps_used = nullptr);

/// Sites of V_N = N[-1,1]^d centred in the torus, with a margin of at least
/// K+1 sites on every side.
struct PositivityRegion {
  TorusGrid grid;
  int N = 0;
  std::vector<int> center;
  std::vector<std::size_t> sites;
  std::vector<unsigned char> mask;  // per torus site

  static PositivityRegion make(const TorusGrid& grid, int N, int K);
  bool contains(std::size_t site) const { return mask[site] != 0; }
  /// min over V_N of the field.
  double min_over(std::span<const double> field) const;
};

/// Sample Z ~ N(0,1) conditioned on Z >= alpha from a uniform v in (0,1):
/// Q(z) = v Q(alpha), solved in log space when alpha is far in the tail.
double truncated_normal_tail(double alpha, double v);

/// log P(Z >= z) for a standard normal Z, accurate for all z.
double log_normal_tail(double z);

enum class SweepOrder { lexicographic, colored };

/// Which sites a sweep resamples.
enum class UpdateSet { all, region_only };

/// Single-site heat-bath dynamics for N(0, J_eps^{-1}) on a torus, optionally
/// truncated to phi >= 0 on a positivity region. Randomness for site s in
/// sweep t is Philox block s of stream (seed, "gibbs", t), so a sweep is
/// reproducible and, in colored order, independent of the thread count.
class GibbsChain {
public:
  GibbsChain(const QPolynomial& q, LatticeField initial, std::uint64_t seed);

  const LatticeField& state() const { return state_; }
  LatticeField& state() { return state_; }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t sweeps_done() const { return sweeps_; }
  const JStencil& stencil() const { return stencil_; }

  /// One unconstrained sweep.
  void sweep(SweepOrder order = SweepOrder::lexicographic);
  /// One sweep truncated to [0, inf) on the region. Throws if the state is
  /// negative somewhere on the region.
  void truncated_sweep(const PositivityRegion& region, SweepOrder order = SweepOrder::lexicographic,
                       UpdateSet update = UpdateSet::all);

  /// Conditional mean of the site given all others.
  double site_mean(std::size_t site) const;

  struct Checkpoint {
    std::uint64_t seed = 0;
    std::uint64_t sweeps = 0;
    TorusGrid grid;
    std::vector<double> q_dense;
    std::vector<double> field;
  };
  Checkpoint checkpoint() const;
  static GibbsChain resume(const Checkpoint& cp);

private:
  template <class Update>
  void run_sweep(SweepOrder order, const PositivityRegion* region, UpdateSet update, Update&& update_site);
  const std::vector<std::vector<std::size_t>>& color_classes() const;

  QPolynomial q_;
  JStencil stencil_;
  LatticeField state_;
  std::uint64_t seed_;
  std::uint64_t sweeps_ = 0;
  std::vector<std::int32_t> neighbors_;  // site * offsets + j
  mutable std::vector<std::vector<std::size_t>> colors_;
};

/// Convenience wrappers: one sweep of a chain whose sweep counter is 0.
LatticeField gibbs_sweep(const QPolynomial& q, const LatticeField& field, std::uint64_t seed);
LatticeField truncated_gibbs_sweep(const QPolynomial& q, const LatticeField& field, const PositivityRegion& region,
                                   std::uint64_t seed);

void save_checkpoint(std::ostream& os, const GibbsChain::Checkpoint& cp);
GibbsChain::Checkpoint load_checkpoint(std::istream& is);

/// Conditional mean coefficients from the covariance side: rows w_b with
/// E[phi_b | phi_S] = sum_s w_b(s) phi_s for b in `targets`, S = `conditioning`
/// (torus site indices). Dense Cholesky for |S| <= dense_limit, otherwise CG
/// with the circulant covariance applied by FFT.
std::vector<std::vector<double>> covariance_conditional_coefficients(const QPolynomial& q, const TorusGrid& grid,
                                                                     const std::vector<std::size_t>& targets,
                                                                     const std::vector<std::size_t>& conditioning,
                                                                     std::size_t dense_limit = 3000);

/// E[phi_T | phi_S = values] from the covariance side by CG with the
/// circulant covariance applied by FFT.
std::vector<double> covariance_conditional_mean(const QPolynomial& q, const TorusGrid& grid,
                                                const std::vector<std::size_t>& targets,
                                                const std::vector<std::size_t>& conditioning,
                                                std::span<const double> values);

struct MarkovReport {
  double residual = 0.0;          // max of the two parts below
  double boundary_mismatch = 0.0;  // full-exterior vs dB-only coefficients on dB
  double exterior_weight = 0.0;    // max |coefficient| beyond dB
  std::size_t conditioning_sites = 0;
  bool dense = true;
};

/// Compares E[phi_B | phi_{B^c}] with E[phi_B | phi_dB] on the torus.
/// Needs grid.eps > 0 and the torus wide enough that B u dB does not wrap.
MarkovReport markov_check(const QPolynomial& q, const TorusGrid& grid, const BoxGeometry& geometry,
                          std::size_t dense_limit = 3000);

/// Torus site indices of geometry sites (center + offset mod L).
std::vector<std::size_t> torus_sites(const TorusGrid& grid, const BoxGeometry& geometry,
                                     const std::vector<std::vector<int>>& offsets);

} // namespace entrep
