#pragma once

#include "entrep/lattice.hpp"

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <span>
#include <vector>

namespace entrep {

/// lambda(theta) = 1 - (1/d) sum_i cos(theta_i): the Fourier multiplier of -Delta.
double symbol_lambda(std::span<const double> theta);

/// q(eps + lambda(theta)): the Fourier multiplier of J_eps.
double symbol_value(const QPolynomial& q, double eps, std::span<const double> theta);

/// The symbol tabulated on all frequencies m in Z_L^d (theta = 2 pi m / L).
class SymbolGrid {
public:
  /// Throws if eps > 0 and some value is not strictly positive.
  static SymbolGrid build(const QPolynomial& q, const TorusGrid& grid);

  const TorusGrid& grid() const { return grid_; }
  std::span<const double> values() const { return values_; }
  double at(std::span<const int> m) const { return values_[grid_.index(m)]; }

private:
  TorusGrid grid_;
  std::vector<double> values_;
};

/// Covariances G_eps^{(L)}(0, x) for every displacement x of the torus.
class GreenTable {
public:
  GreenTable(TorusGrid grid, QPolynomial q, std::vector<double> values, double imag_residue);

  const TorusGrid& grid() const { return grid_; }
  const QPolynomial& q() const { return q_; }
  std::span<const double> values() const { return values_; }
  /// Any integer displacement; reduced mod L.
  double at(std::span<const int> x) const { return values_[grid_.index(x)]; }
  double origin() const { return values_.front(); }
  /// Largest |Im| of the inverse FFT relative to G(0,0).
  double imag_residue() const { return imag_residue_; }
  LatticeField as_field() const { return LatticeField(grid_, values_); }

private:
  TorusGrid grid_;
  QPolynomial q_;
  std::vector<double> values_;
  double imag_residue_;
};

/// Inverse FFT of 1/symbol. Requires grid.eps > 0 ("zero mode singular").
GreenTable green_torus(const QPolynomial& q, const TorusGrid& grid);

/// Max |G(x) - G(g x)| over the cubic symmetry group (sign flips and axis
/// permutations) applied to every displacement.
double cubic_symmetry_defect(const GreenTable& table);

/// Tensor trapezoid on [-pi, pi]^d with the singular node at theta = 0
/// omitted, evaluated at `levels` node counts nodes * growth^j (rounded to
/// even), then Richardson-extrapolated with the error exponents
/// d - 2k + 2j of a |theta|^{-2k} singularity.
struct QuadratureSpec {
  int nodes = 64;
  int levels = 4;
  double growth = 1.5;
  double tolerance = 1e-7;  // relative, on the extrapolation error estimate
};

struct GreenInfiniteResult {
  std::vector<int> x;
  double value = 0.0;
  double error_estimate = 0.0;
  bool converged = false;
  std::vector<int> node_counts;
  std::vector<double> level_values;
};

/// G(0, x) = (2 pi)^{-d} \int cos(theta . x) / q(lambda(theta)) d theta on Z^d.
/// Throws if the model fails validate_model.
GreenInfiniteResult green_infinite(const QPolynomial& q, int d, std::span<const int> x,
                                   const QuadratureSpec& quad = {});

/// Batched evaluation sharing the quadrature tables.
std::vector<GreenInfiniteResult> green_infinite_many(const QPolynomial& q, int d,
                                                     const std::vector<std::vector<int>>& xs,
                                                     const QuadratureSpec& quad = {});

/// Richardson extrapolation of values at step sizes 1/n with the given error
/// exponents (uses the first values.size()-1 exponents).
double richardson(std::span<const double> inv_steps, std::span<const double> values,
                  std::span<const double> exponents);

struct DecayRow {
  std::string direction;  // "axis" or "diagonal"
  std::vector<int> x;
  double radius = 0.0;
  double green = 0.0;
  double green_error = 0.0;
  double ratio = 0.0;  // q_k G(0,x) |x|^{d-2k}
};

struct DecayResult {
  double eta = 0.0;  // mean of the two directional fits
  double eta_error = 0.0;
  double eta_axis = 0.0, eta_axis_error = 0.0;
  double eta_diagonal = 0.0, eta_diagonal_error = 0.0;
  std::vector<DecayRow> rows;
  int node_floor = 0;
  int fit_power = 1;

  /// (max - min) / mean of `ratio` over rows with radius in [lo, hi].
  double ratio_variation(double lo, double hi) const;
};

/// Decay constant eta_k = lim q_k G(0,x) |x|^{d-2k}: ratio tables along a
/// coordinate axis and the main diagonal for radii in [r_min, r_max], each
/// fitted as eta + c/|x|^fit_power. The fit error is the larger of the
/// regression standard error and the intercept shift when only the outer
/// half of the radii is used. The quadrature node count is raised to at
/// least 8 r_max so the oscillatory factor is resolved.
DecayResult decay_constant(const QPolynomial& q, int d, int r_min, int r_max,
                           const QuadratureSpec& quad = {}, int fit_power = 1);

/// Draws exact samples of N(0, J_eps^{-1}) on the torus: independent complex
/// Gaussians per frequency with variance 1/(L^d symbol), Hermitian-symmetrised,
/// then one inverse real FFT. Scratch buffers are per call; `draw` is safe to
/// call concurrently.
class SpectralSampler {
public:
  SpectralSampler(const QPolynomial& q, const TorusGrid& grid);
  ~SpectralSampler();
  SpectralSampler(const SpectralSampler&) = delete;
  SpectralSampler& operator=(const SpectralSampler&) = delete;

  const TorusGrid& grid() const { return grid_; }
  /// Draw number `index` of the stream seeded by `seed`.
  LatticeField draw(std::uint64_t seed, std::uint64_t index) const;
  void draw_into(std::uint64_t seed, std::uint64_t index, std::span<double> out) const;

private:
  struct Impl;
  TorusGrid grid_;
  std::unique_ptr<Impl> impl_;
};

LatticeField spectral_sample(const TorusGrid& grid, const QPolynomial& q, std::uint64_t seed);

struct CovarianceEstimate {
  std::vector<int> displacement;
  double value = 0.0;
  double std_error = 0.0;
};

/// Streams samples; per sample it stores the translation average
/// (1/L^d) sum_y phi_y phi_{y+x} for each displacement.
class CovarianceAccumulator {
public:
  CovarianceAccumulator(TorusGrid grid, std::vector<std::vector<int>> displacements);

  void add(std::span<const double> field);
  void add(const LatticeField& field) { add(field.values()); }
  std::size_t samples() const { return per_sample_.size() / displacements_.size(); }

  /// Jackknife standard errors over `blocks` contiguous sample blocks
  /// (0: one block per sample). Blocks absorb chain autocorrelation.
  std::vector<CovarianceEstimate> estimate(std::size_t blocks = 0) const;

private:
  TorusGrid grid_;
  std::vector<std::vector<int>> displacements_;
  std::vector<std::vector<std::size_t>> shifted_;  // site -> site + x, per displacement
  std::vector<double> per_sample_;
};

std::vector<CovarianceEstimate> empirical_covariance(std::span<const LatticeField> samples,
                                                     const std::vector<std::vector<int>>& displacements,
                                                     std::size_t blocks = 0);

/// Representatives 0 <= x_1 <= ... <= x_d with |x|_2 <= radius.
std::vector<std::vector<int>> canonical_displacements(int d, double radius);

struct CovarianceAgreement {
  double max_abs_z = 0.0;
  double chi_square = 0.0;
  int dof = 0;
  double p_value = 1.0;
};

/// z-scores (estimate - G)/se against a Green table and the chi-square sum.
CovarianceAgreement compare_covariance(const std::vector<CovarianceEstimate>& est, const GreenTable& table);

/// CSV with a `#` header naming d, L, eps and q; one row per site.
void write_green_csv(std::ostream& os, const GreenTable& table);
/// CSV of the decay ratio table with the fitted constants in the header.
void write_decay_csv(std::ostream& os, const QPolynomial& q, int d, const DecayResult& result);

} // namespace entrep
