#pragma once

#include "entrep/lattice.hpp"

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace entrep {

/// Discretised k-th order capacity of V = [-a, a]^d (a = half_width, default
/// 1) on the node grid h_step * Z^d, with zero Dirichlet data at |x| >= R.
struct ObstacleProblem {
  int k = 1;
  int d = 3;
  double h_step = 0.25;
  double R = 4.0;
  double half_width = 1.0;

  /// Throws unless d >= 2k+1, R > sqrt(d) a, and h_step divides 2a and 2R.
  void validate() const;
  /// Nodes per half-axis of the padded grid: R/h + k.
  int half_extent() const;
};

struct ObstacleOptions {
  double tolerance = 1e-8;  // on the projected-gradient norm, relative to the first one
  int max_iterations = 200000;
};

struct KKTReport {
  double feasibility = 0.0;     // max violation of u >= 1 on V and u = 0 beyond R
  double stationarity = 0.0;    // max |(-Delta_h)^k u| off V within R - k h, over scale
  double complementarity = 0.0; // sum over V of |u - 1| |(-Delta_h)^k u|, over scale
  double dual_sign = 0.0;       // max(0, -min over V of (-Delta_h)^k u), over scale
  double contact_deviation = 0.0;  // max |u - 1| on V
  double scale = 0.0;           // max |(-Delta_h)^k u| over the free nodes
};

struct ObstacleSolution {
  ObstacleProblem problem;
  double value = 0.0;  // (2d)^{-k} h^d <u, (-Delta_h)^k u>
  int M = 0;           // the grid is {-M..M}^d
  std::vector<double> u;
  int iterations = 0;
  double pg_initial = 0.0;
  double pg_final = 0.0;
  bool converged = false;
  KKTReport kkt;
  double symmetry_defect = 0.0;  // max |u - u o g| over axis swaps and flips

  /// Value at the node with integer coordinates m (|m_i| <= M).
  double at(std::span<const int> m) const;
};

/// Minimises the discrete energy over u >= 1 on V, u = 0 beyond R, by FISTA
/// with gradient restarts. `warm` (a solution on a coarser or equal grid) is
/// interpolated multilinearly as the starting point.
ObstacleSolution solve_obstacle(const ObstacleProblem& p, const ObstacleOptions& opts = {},
                                const ObstacleSolution* warm = nullptr);

/// Multilinear interpolation of a solution at a physical point.
double interpolate(const ObstacleSolution& s, std::span<const double> x);

struct CapacitySample {
  double h_step = 0.0;
  double R = 0.0;
  double value = 0.0;
};

enum class RadiusFit { additive, reciprocal };

struct CapacityExtrapolation {
  bool refused = false;
  std::string reason;
  std::vector<CapacitySample> raw;

  // Richardson in h at the fixed radius.
  double fixed_R = 0.0;
  double order = 0.0;  // observed convergence order
  double h_limit = 0.0;
  double h_correction = 0.0;  // h_limit minus the finest value
  double h_error = 0.0;

  // Radius fit at the finest h: v(R) = v_inf + c R^{2k-d}, or the same form
  // for 1/v(R).
  RadiusFit fit = RadiusFit::reciprocal;
  double R_limit_additive = 0.0;
  double R_limit_reciprocal = 0.0;
  double R_correction = 0.0;  // selected R_limit minus the value at the largest R
  double R_error = 0.0;

  double value = 0.0;  // R_limit scaled by the relative h correction
  double error = 0.0;
};

/// `h_sequence`: >= 3 samples at one R; `R_sequence`: >= 2 samples at the
/// finest h of `h_sequence`. Refuses (raw values only) if the h sequence is not
/// strictly monotone with shrinking increments or the R sequence is not monotone.
CapacityExtrapolation extrapolate_capacity(int k, int d, const std::vector<CapacitySample>& h_sequence,
                                           const std::vector<CapacitySample>& R_sequence,
                                           RadiusFit fit = RadiusFit::reciprocal);

/// The Gram matrix of g_k(x) = (eta_k/q_k)|x|^{2k-d} over the n^d cubes of
/// side 2a/n tiling V: entry (i,j) is the average of g_k over the cell pair,
/// computed by quadrature when the cells are within `near_field` cells of
/// each other along every axis and by the midpoint rule otherwise.
struct KernelOperator {
  int k = 1;
  int d = 3;
  int resolution = 0;
  double half_width = 1.0;
  double eta = 0.0;
  double q_k = 1.0;
  int near_field = 0;
  std::vector<double> matrix;  // row-major, cells lexicographic

  std::size_t cells() const;
  double cell_volume() const;
  std::vector<double> cell_center(std::size_t i) const;
  /// (K f)_i = cell_volume * sum_j matrix_ij f_j.
  std::vector<double> apply(std::span<const double> f) const;
};

/// Throws if d < 2k+1, eta <= 0 or q_k <= 0, or if the assembled matrix is not
/// positive definite.
KernelOperator kernel_matrix(int k, int d, double eta, double q_k, int resolution, double half_width = 1.0,
                             int near_field = 0);

/// Average of |x - y|^alpha over x, y uniform in the unit cube [0,1]^d
/// (alpha > -d). Cached per (alpha, d).
double self_cell_average(double alpha, int d);

/// Average of |delta + x - y|^alpha over x, y uniform in the unit cube, for an
/// integer displacement delta.
double cell_pair_average(double alpha, std::span<const int> delta);

struct DualValues {
  double linear = 0.0;    // 2<f,1> - <f,Kf>
  double rayleigh = 0.0;  // <f,1>^2 / <f,Kf>
};

/// Both functionals with cell-volume weights. Throws on f = 0.
DualValues dual_values(const KernelOperator& K, std::span<const double> f);

/// f solving K f = 1_V.
std::vector<double> dual_optimizer(const KernelOperator& K);

struct EigenCapacity {
  double value = 0.0;  // sum_i <e_i,1>^2 / lambda_i
  std::vector<double> eigenvalues;  // of K on L^2(V), ascending
  std::vector<double> weights;      // <e_i,1>^2
  std::string backend;              // "lapack-dsyevd", or "eigen" after a failed check
  double residual = 0.0;            // eigenpair check of the accepted decomposition
};

/// Full dense eigendecomposition by LAPACK dsyevd, checked on sampled
/// eigenpairs and by Parseval; falls back to Eigen's self-adjoint solver when
/// the check fails. Throws when the workspace would exceed `memory_limit` bytes.
EigenCapacity eigen_capacity(const KernelOperator& K, std::size_t memory_limit = std::size_t(3) << 29);

struct NormalizationCandidate {
  std::string name;
  double constant = 0.0;
  double lhs = 0.0;  // constant * <h, K (-Delta)^k f>
  double residual = 0.0;  // |lhs - <h,f>| / |<h,f>|
};

struct InverseIdentityReport {
  int k = 1;
  int d = 3;
  int resolution = 0;
  double eta = 0.0;
  double q_k = 0.0;
  double rhs = 0.0;  // <h, f>
  double raw = 0.0;  // <h, K (-Delta)^k f>
  std::vector<NormalizationCandidate> candidates;
  std::size_t best = 0;
};

/// Compares c <h, K_k (-Delta)^k f> with <h, f> for the candidate constants
/// q_k/(2d)^{2k}, q_k/(2d)^k, q_k and 1. f is a tensor polynomial bump
/// supported in [-bump_width, bump_width]^d with (-Delta)^k f evaluated
/// exactly; h(x) = 1 + x_1/2 + x_2^2 (d >= 2). K is applied by FFT
/// convolution on the cell grid of V with the kernel_matrix entries. `scale`
/// multiplies f.
InverseIdentityReport verify_inverse_identity(const QPolynomial& q, int d, int resolution, double eta,
                                              double bump_width = 0.8, double scale = 1.0, int near_field = 0);

/// eta_k for the model from the spectral decay fit, with radii chosen per
/// (k, d) as in the reference runs.
double model_decay_constant(const QPolynomial& q, int d);

struct CapacityResult {
  ObstacleProblem problem;
  double primal = 0.0;      // radius-extrapolated at this h when several R were solved
  double primal_raw = 0.0;  // at the largest R
  int kernel_resolution = 0;
  double eta = 0.0;
  double q_k = 1.0;
  double dual_linear = 0.0;
  double dual_rayleigh = 0.0;
  double eigen_sum = 0.0;
  /// dual / q_k: the duals equal q_k C_k, the primal is C_k.
  double dual_capacity = 0.0;
  double gap = 0.0;  // |primal - dual_capacity| / primal
};

/// The radius limit of one h column: the intercept of v (additive) or 1/v
/// (reciprocal) against R^{2k-d}. Needs >= 2 distinct R.
double radius_limit(int k, int d, const std::vector<CapacitySample>& samples, RadiusFit fit = RadiusFit::reciprocal);

/// Primal solves on every (1/h, R) pair, the extrapolation, and one
/// dual/eigen evaluation per kernel resolution n matched with h = 2a/n.
struct CapacityStudySpec {
  QPolynomial q{1, {1.0}};
  int d = 3;
  double half_width = 1.0;
  std::vector<int> inverse_steps{4, 6, 8};  // 1/h
  std::vector<double> radii{3.0, 4.0, 6.0};
  std::vector<int> kernel_resolutions{8, 12, 16};
  int near_field = 0;
  RadiusFit fit = RadiusFit::reciprocal;
  ObstacleOptions options;
  double eta = 0.0;  // 0: model_decay_constant

  void validate() const;
};

struct CapacityStudy {
  CapacityStudySpec spec;
  double eta = 0.0;
  std::vector<ObstacleSolution> solutions;  // h-major, radii ascending
  CapacityExtrapolation extrapolation;
  std::vector<CapacityResult> results;       // per kernel resolution
  std::vector<EigenCapacity> spectra;
  bool converged = true;                     // every primal solve converged
};

CapacityStudy capacity_study(const CapacityStudySpec& spec);

/// One row per kernel resolution; `header` lines are written first with a
/// "# " prefix.
void write_capacity_csv(std::ostream& os, const CapacityStudy& s, const std::string& header = {});
/// One row per primal solve with its KKT report.
void write_capacity_samples_csv(std::ostream& os, const CapacityStudy& s, const std::string& header = {});

void write_capacity_json(std::ostream& os, const CapacityResult& r);
void write_extrapolation_json(std::ostream& os, int k, int d, const CapacityExtrapolation& e);
/// Nodes of the minimiser on the coordinate plane x_3 = ... = x_d = 0.
void write_minimizer_csv(std::ostream& os, const ObstacleSolution& s);
void write_spectrum_csv(std::ostream& os, const EigenCapacity& e);

} // namespace entrep
