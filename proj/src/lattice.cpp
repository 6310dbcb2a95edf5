#include "entrep/lattice.hpp"

#include "entrep/error.hpp"
#include "entrep/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace entrep {

QPolynomial::QPolynomial(int k, std::vector<double> coeffs) : k_(k), coeffs_(std::move(coeffs)) {
  if (k_ < 1) throw Error("lattice-core", "minimal degree k must be >= 1 (q has no constant term)");
  if (coeffs_.empty()) throw Error("lattice-core", "q needs at least one coefficient");
  if (coeffs_.front() == 0.0) throw Error("lattice-core", "q_k must be non-zero (k is the minimal degree)");
  if (coeffs_.back() == 0.0) throw Error("lattice-core", "q_K must be non-zero (K is the maximal degree)");
  for (double c : coeffs_)
    if (!std::isfinite(c)) throw Error("lattice-core", "q coefficients must be finite");
}

QPolynomial QPolynomial::from_coefficients(const std::vector<double>& q_from_one) {
  auto first = std::find_if(q_from_one.begin(), q_from_one.end(), [](double c) { return c != 0.0; });
  if (first == q_from_one.end()) throw Error("lattice-core", "q must have a non-zero coefficient");
  auto last = std::find_if(q_from_one.rbegin(), q_from_one.rend(), [](double c) { return c != 0.0; }).base();
  const int k = static_cast<int>(first - q_from_one.begin()) + 1;
  return QPolynomial(k, std::vector<double>(first, last));
}

double QPolynomial::coeff(int j) const {
  if (j < k_ || j > K()) return 0.0;
  return coeffs_[static_cast<std::size_t>(j - k_)];
}

std::vector<double> QPolynomial::dense() const {
  std::vector<double> out(static_cast<std::size_t>(K()), 0.0);
  for (int j = k_; j <= K(); ++j) out[static_cast<std::size_t>(j - 1)] = coeff(j);
  return out;
}

double QPolynomial::operator()(double r) const { return eval_q(*this, r); }

QPolynomial QPolynomial::scaled(double c) const {
  auto v = coeffs_;
  for (double& x : v) x *= c;
  return QPolynomial(k_, std::move(v));
}

std::string QPolynomial::to_string() const {
  std::ostringstream os;
  os.precision(17);
  const auto d = dense();
  for (std::size_t i = 0; i < d.size(); ++i) os << (i ? "," : "") << d[i];
  return os.str();
}

double eval_q(const QPolynomial& q, double r) {
  const auto& c = q.coeffs();
  double acc = 0.0;
  for (auto it = c.rbegin(); it != c.rend(); ++it) acc = acc * r + *it;
  for (int i = 0; i < q.k(); ++i) acc *= r;
  return acc;
}

std::size_t TorusGrid::sites() const {
  std::size_t n = 1;
  for (int i = 0; i < d; ++i) n *= static_cast<std::size_t>(L);
  return n;
}

std::vector<int> TorusGrid::coords(std::size_t site) const {
  std::vector<int> x(static_cast<std::size_t>(d));
  for (int i = d - 1; i >= 0; --i) {
    x[static_cast<std::size_t>(i)] = static_cast<int>(site % static_cast<std::size_t>(L));
    site /= static_cast<std::size_t>(L);
  }
  return x;
}

std::size_t TorusGrid::index(std::span<const int> x) const {
  std::size_t s = 0;
  for (int v : x) {
    const int r = ((v % L) + L) % L;
    s = s * static_cast<std::size_t>(L) + static_cast<std::size_t>(r);
  }
  return s;
}

std::vector<int> reduce_displacement(std::span<const int> x, int L) {
  std::vector<int> out(x.begin(), x.end());
  for (int& v : out) {
    v = ((v % L) + L) % L;  // [0, L)
    if (2 * v > L) v -= L;   // (-L/2, L/2]
  }
  return out;
}

void require_range_fits(const TorusGrid& grid, const QPolynomial& q) {
  if (grid.L < 2 * q.K() + 1) {
    std::ostringstream os;
    os << "torus side L=" << grid.L << " must be >= 2K+1=" << 2 * q.K() + 1
       << " so the range-K operator J does not wrap onto itself";
    throw Error("lattice-core", os.str());
  }
}

LatticeField::LatticeField(TorusGrid grid) : grid_(grid), values_(grid.sites(), 0.0) {
  if (grid_.d < 1 || grid_.L < 2) throw Error("lattice-core", "torus needs d >= 1 and L >= 2");
}

LatticeField::LatticeField(TorusGrid grid, std::vector<double> values)
    : grid_(grid), values_(std::move(values)) {
  if (values_.size() != grid_.sites())
    throw Error("lattice-core", "field value count must equal L^d");
  for (double v : values_)
    if (!std::isfinite(v)) throw Error("lattice-core", "field values must be finite");
}

LatticeField LatticeField::constant(const TorusGrid& grid, double c) {
  return LatticeField(grid, std::vector<double>(grid.sites(), c));
}

LatticeField LatticeField::spike(const TorusGrid& grid, std::span<const int> at) {
  LatticeField f(grid);
  f[grid.index(at)] = 1.0;
  return f;
}

double inner(const LatticeField& a, const LatticeField& b) {
  return kernels::dot(kernels::default_backend(), a.values(), b.values());
}

bool ValidationReport::passed() const {
  return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
}

const AssumptionResult* ValidationReport::first_failure() const {
  for (const auto& r : results)
    if (!r.passed) return &r;
  return nullptr;
}

namespace {

double horner(const std::vector<double>& c, double r) {
  double acc = 0.0;
  for (auto it = c.rbegin(); it != c.rend(); ++it) acc = acc * r + *it;
  return acc;
}

std::vector<double> trimmed(std::vector<double> c) {
  while (!c.empty() && c.back() == 0.0) c.pop_back();
  return c;
}

} // namespace

std::vector<double> real_roots_in(const std::vector<double>& coeffs, double lo, double hi) {
  const auto c = trimmed(coeffs);
  std::vector<double> roots;
  if (c.size() <= 1) return roots;
  if (c.size() == 2) {
    const double r = -c[0] / c[1];
    if (r >= lo && r <= hi) roots.push_back(r);
    return roots;
  }
  std::vector<double> deriv(c.size() - 1);
  for (std::size_t i = 1; i < c.size(); ++i) deriv[i - 1] = static_cast<double>(i) * c[i];
  std::vector<double> pts{lo};
  for (double r : real_roots_in(deriv, lo, hi))
    if (r > pts.back()) pts.push_back(r);
  if (hi > pts.back()) pts.push_back(hi);

  // p is monotone between consecutive points of `pts`.
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    double a = pts[i], b = pts[i + 1];
    double pa = horner(c, a), pb = horner(c, b);
    if (pa == 0.0) {
      roots.push_back(a);
      continue;
    }
    if (i + 2 == pts.size() && pb == 0.0) {
      roots.push_back(b);
      continue;
    }
    if ((pa < 0.0) == (pb < 0.0)) continue;
    for (int it = 0; it < 200 && b - a > 1e-15 * std::max(1.0, std::abs(a)); ++it) {
      const double m = 0.5 * (a + b);
      const double pm = horner(c, m);
      if ((pm < 0.0) == (pa < 0.0)) {
        a = m;
        pa = pm;
      } else {
        b = m;
      }
    }
    roots.push_back(0.5 * (a + b));
  }
  std::sort(roots.begin(), roots.end());
  roots.erase(std::unique(roots.begin(), roots.end(),
                          [](double x, double y) { return std::abs(x - y) < 1e-12; }),
              roots.end());
  return roots;
}

ValidationReport validate_model(const ModelSpec& model, int grid_points) {
  ValidationReport report;
  const int k = model.q.k();

  AssumptionResult a{"a", model.d >= 2 * k + 1, std::nullopt, ""};
  {
    std::ostringstream os;
    os << "assumption (a) d >= 2k+1: d=" << model.d << ", 2k+1=" << 2 * k + 1;
    a.message = os.str();
  }
  report.results.push_back(a);

  AssumptionResult b{"b", true, std::nullopt, ""};
  double worst_r = 0.0, worst_q = std::numeric_limits<double>::infinity();
  for (int m = 1; m <= grid_points; ++m) {
    const double r = 2.0 * m / grid_points;
    const double v = model.q(r);
    if (v < worst_q) {
      worst_q = v;
      worst_r = r;
    }
  }
  // q(r)/r^k on [delta, 2]: its minimum sits at an endpoint or a critical point.
  constexpr double kDeltaCheck = 1e-8;
  const auto& c = model.q.coeffs();
  const auto roots = real_roots_in(c, kDeltaCheck, 2.0);
  std::vector<double> crit;
  if (c.size() > 1) {
    std::vector<double> deriv(c.size() - 1);
    for (std::size_t i = 1; i < c.size(); ++i) deriv[i - 1] = static_cast<double>(i) * c[i];
    crit = real_roots_in(deriv, kDeltaCheck, 2.0);
  }
  crit.push_back(kDeltaCheck);
  crit.push_back(2.0);
  double min_p = std::numeric_limits<double>::infinity(), min_p_at = 0.0;
  for (double r : crit) {
    const double v = horner(c, r);
    if (v < min_p) {
      min_p = v;
      min_p_at = r;
    }
  }
  if (worst_q <= 0.0 || min_p <= 0.0 || !roots.empty()) {
    b.passed = false;
    b.witness = !roots.empty() ? roots.front() : (min_p <= 0.0 ? min_p_at : worst_r);
    std::ostringstream os;
    os << "assumption (b) q(r) > 0 on (0,2] violated; q vanishes or turns negative near r=" << *b.witness;
    b.message = os.str();
  } else {
    b.message = "assumption (b) q(r) > 0 on (0,2]: holds";
  }
  report.results.push_back(b);
  return report;
}

LatticeField laplacian_apply(const LatticeField& f) {
  const auto& g = f.grid();
  LatticeField out(g);
  kernels::torus_stencil(kernels::default_backend(), g.d, g.L, -1.0, 1.0 / (2.0 * g.d), f.values(),
                         out.values());
  return out;
}

LatticeField gradient_apply(const LatticeField& f, int axis) {
  const auto& g = f.grid();
  if (axis < 1 || axis > g.d) throw Error("lattice-core", "gradient axis must be in [1, d]");
  LatticeField out(g);
  kernels::torus_forward_difference(kernels::default_backend(), g.d, g.L, axis - 1, f.values(),
                                    out.values());
  return out;
}

namespace {

// out = (eps I - Delta) in
void shifted_neg_laplacian(double eps, const TorusGrid& g, std::span<const double> in, std::span<double> out) {
  kernels::torus_stencil(kernels::default_backend(), g.d, g.L, 1.0 + eps, -1.0 / (2.0 * g.d), in, out);
}

} // namespace

LatticeField j_apply(const QPolynomial& q, double eps, const LatticeField& f) {
  if (eps < 0.0) throw Error("lattice-core", "mass regularisation eps must be >= 0");
  const auto& g = f.grid();
  const auto& c = q.coeffs();
  const auto fv = f.values();
  std::vector<double> acc(fv.size()), tmp(fv.size());
  for (std::size_t i = 0; i < fv.size(); ++i) acc[i] = c.back() * fv[i];
  for (int j = q.K() - 1; j >= q.k(); --j) {
    shifted_neg_laplacian(eps, g, acc, tmp);
    const double qj = c[static_cast<std::size_t>(j - q.k())];
    for (std::size_t i = 0; i < fv.size(); ++i) acc[i] = tmp[i] + qj * fv[i];
  }
  for (int i = 0; i < q.k(); ++i) {
    shifted_neg_laplacian(eps, g, acc, tmp);
    acc.swap(tmp);
  }
  return LatticeField(g, std::move(acc));
}

double hamiltonian_energy(const QPolynomial& q, const LatticeField& f) {
  const auto& g = f.grid();
  const auto backend = kernels::default_backend();
  double total = 0.0;
  // powers[m] = (-Delta)^m f
  std::vector<std::vector<double>> powers{std::vector<double>(f.values().begin(), f.values().end())};
  auto power = [&](int m) -> const std::vector<double>& {
    while (static_cast<int>(powers.size()) <= m) {
      std::vector<double> next(powers.back().size());
      shifted_neg_laplacian(0.0, g, powers.back(), next);
      powers.push_back(std::move(next));
    }
    return powers[static_cast<std::size_t>(m)];
  };
  std::vector<double> grad(f.size());
  for (int j = q.k(); j <= q.K(); ++j) {
    const double qj = q.coeff(j);
    if (qj == 0.0) continue;
    double term = 0.0;
    if (j % 2 == 0) {
      const auto& w = power(j / 2);
      term = kernels::dot(backend, w, w);
    } else {
      const auto& w = power((j - 1) / 2);
      for (int axis = 0; axis < g.d; ++axis) {
        kernels::torus_forward_difference(backend, g.d, g.L, axis, w, grad);
        term += kernels::dot(backend, grad, grad);
      }
      term /= 2.0 * g.d;
    }
    total += qj * term;
  }
  return total;
}

} // namespace entrep
