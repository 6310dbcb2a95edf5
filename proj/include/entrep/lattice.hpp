#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace entrep {

/// The polynomial q(r) = sum_{j=k}^{K} q_j r^j defining the precision operator
/// q(eps I - Delta). Both end coefficients are non-zero.
class QPolynomial {
public:
  /// `coeffs[i]` is q_{k+i}.
  QPolynomial(int k, std::vector<double> coeffs);

  /// Build from q_1, ..., q_K; leading zeros fix the minimal degree k.
  static QPolynomial from_coefficients(const std::vector<double>& q_from_one);

  int k() const { return k_; }
  int K() const { return k_ + static_cast<int>(coeffs_.size()) - 1; }
  double coeff(int j) const;
  const std::vector<double>& coeffs() const { return coeffs_; }
  /// q_1..q_K with zeros below k.
  std::vector<double> dense() const;

  double operator()(double r) const;
  QPolynomial scaled(double c) const;
  std::string to_string() const;

  friend bool operator==(const QPolynomial&, const QPolynomial&) = default;

private:
  int k_;
  std::vector<double> coeffs_;
};

/// Horner evaluation r^k (q_k + q_{k+1} r + ...).
double eval_q(const QPolynomial& q, double r);

/// Periodic lattice Z_L^d with mass regularisation eps >= 0.
struct TorusGrid {
  int d = 3;
  int L = 16;
  double eps = 0.0;

  std::size_t sites() const;
  std::vector<int> coords(std::size_t site) const;
  /// Row-major index; coordinates are reduced mod L first.
  std::size_t index(std::span<const int> x) const;

  friend bool operator==(const TorusGrid&, const TorusGrid&) = default;
};

/// Representative of x mod L in (-L/2, L/2]^d.
std::vector<int> reduce_displacement(std::span<const int> x, int L);

/// Throws unless L >= 2K+1 (a range-K operator must not wrap onto a site).
void require_range_fits(const TorusGrid& grid, const QPolynomial& q);

class LatticeField {
public:
  explicit LatticeField(TorusGrid grid);
  LatticeField(TorusGrid grid, std::vector<double> values);

  static LatticeField constant(const TorusGrid& grid, double c);
  static LatticeField spike(const TorusGrid& grid, std::span<const int> at);

  const TorusGrid& grid() const { return grid_; }
  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double at(std::span<const int> x) const { return values_[grid_.index(x)]; }

private:
  TorusGrid grid_;
  std::vector<double> values_;
};

double inner(const LatticeField& a, const LatticeField& b);

struct ModelSpec {
  QPolynomial q;
  int d;
};

struct AssumptionResult {
  std::string name;  // "a" or "b"
  bool passed = false;
  std::optional<double> witness;  // r with q(r) <= 0 for (b)
  std::string message;
};

struct ValidationReport {
  std::vector<AssumptionResult> results;
  bool passed() const;
  const AssumptionResult* first_failure() const;
};

/// Checks d >= 2k+1 and q(r) > 0 on (0,2]. Positivity is checked on a grid of
/// `grid_points` values and by isolating the real roots of q(r)/r^k on
/// [1e-8, 2], so a dip between grid points cannot be missed.
ValidationReport validate_model(const ModelSpec& model, int grid_points = 100000);

/// Real roots of the polynomial sum_i c[i] r^i in [lo, hi], ascending.
std::vector<double> real_roots_in(const std::vector<double>& c, double lo, double hi);

/// (Delta f)(x) = (1/2d) sum_{|y-x|=1} f(y) - f(x), periodic.
LatticeField laplacian_apply(const LatticeField& f);
/// Forward difference f(x+e_axis) - f(x), axis in [1, d].
LatticeField gradient_apply(const LatticeField& f, int axis);
/// q(eps I - Delta) f by Horner's scheme: exactly K stencil applications.
LatticeField j_apply(const QPolynomial& q, double eps, const LatticeField& f);

/// H(phi) = sum_j q_j sum_x ((-Delta)^{j/2} phi_x)^2 on the torus. For odd j
/// the square root is realised through gradients,
///   ((-Delta)^{j/2} phi)^2 := (1/2d) sum_i ((-Delta)^{(j-1)/2} grad_i phi)^2,
/// the 1/2d matching the normalised Laplacian so that H(phi) = <phi, J phi>.
double hamiltonian_energy(const QPolynomial& q, const LatticeField& f);

} // namespace entrep
