#include "entrep/spectral.hpp"

#include "entrep/error.hpp"
#include "entrep/rng.hpp"
#include "fft.hpp"

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

namespace entrep {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::size_t ipow(int base, int e) {
  std::size_t r = 1;
  for (int i = 0; i < e; ++i) r *= static_cast<std::size_t>(base);
  return r;
}

} // namespace

double symbol_lambda(std::span<const double> theta) {
  double s = 0.0;
  for (double t : theta) s += std::cos(t);
  return 1.0 - s / static_cast<double>(theta.size());
}

double symbol_value(const QPolynomial& q, double eps, std::span<const double> theta) {
  return eval_q(q, eps + symbol_lambda(theta));
}

SymbolGrid SymbolGrid::build(const QPolynomial& q, const TorusGrid& grid) {
  SymbolGrid s;
  s.grid_ = grid;
  std::vector<double> cosines(static_cast<std::size_t>(grid.L));
  for (int m = 0; m < grid.L; ++m)
    cosines[static_cast<std::size_t>(m)] = std::cos(kTwoPi * std::min(m, grid.L - m) / grid.L);
  const std::size_t n = grid.sites();
  s.values_.resize(n);
  std::vector<int> m(static_cast<std::size_t>(grid.d), 0);
  for (std::size_t i = 0; i < n; ++i) {
    double c = 0.0;
    for (int a : m) c += cosines[static_cast<std::size_t>(a)];
    const double v = eval_q(q, grid.eps + 1.0 - c / grid.d);
    if (grid.eps > 0.0 && !(v > 0.0))
      throw Error("spectral", "symbol is not positive at some frequency; check assumption (b)");
    s.values_[i] = v;
    for (int a = grid.d - 1; a >= 0; --a) {
      if (++m[static_cast<std::size_t>(a)] < grid.L) break;
      m[static_cast<std::size_t>(a)] = 0;
    }
  }
  return s;
}

GreenTable::GreenTable(TorusGrid grid, QPolynomial q, std::vector<double> values, double imag_residue)
    : grid_(grid), q_(std::move(q)), values_(std::move(values)), imag_residue_(imag_residue) {}

GreenTable green_torus(const QPolynomial& q, const TorusGrid& grid) {
  if (!(grid.eps > 0.0)) throw Error("spectral", "zero mode singular: green_torus needs eps > 0");
  const auto symbol = SymbolGrid::build(q, grid);
  const std::size_t n = grid.sites();
  auto plan = fft::plan_dft(grid.d, grid.L, FFTW_BACKWARD);
  auto buf = fft::alloc_complex(n);
  const auto sv = symbol.values();
  for (std::size_t i = 0; i < n; ++i) {
    buf[i][0] = 1.0 / sv[i];
    buf[i][1] = 0.0;
  }
  fftw_execute_dft(plan.get(), buf.get(), buf.get());
  std::vector<double> values(n);
  double max_imag = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    values[i] = buf[i][0] / static_cast<double>(n);
    max_imag = std::max(max_imag, std::abs(buf[i][1]) / static_cast<double>(n));
  }
  const double residue = max_imag / values[0];
  if (residue > 1e-10) throw Error("spectral", "inverse FFT left an imaginary residue above 1e-10");
  return GreenTable(grid, q, std::move(values), residue);
}

double cubic_symmetry_defect(const GreenTable& table) {
  const auto& g = table.grid();
  double defect = 0.0;
  std::vector<int> y;
  for (std::size_t i = 0; i < g.sites(); ++i) {
    const auto x = g.coords(i);
    const double v = table.values()[i];
    y = x;
    y[0] = -y[0];
    defect = std::max(defect, std::abs(v - table.at(y)));
    for (int a = 0; a + 1 < g.d; ++a) {
      y = x;
      std::swap(y[static_cast<std::size_t>(a)], y[static_cast<std::size_t>(a) + 1]);
      defect = std::max(defect, std::abs(v - table.at(y)));
    }
  }
  return defect;
}

double richardson(std::span<const double> inv_steps, std::span<const double> values,
                  std::span<const double> exponents) {
  const auto m = values.size();
  if (m == 0 || inv_steps.size() != m || exponents.size() + 1 < m)
    throw Error("spectral", "richardson needs one step per value and values-1 exponents");
  if (m == 1) return values[0];
  const double scale = *std::max_element(inv_steps.begin(), inv_steps.end());
  Eigen::MatrixXd A(m, m);
  Eigen::VectorXd b(m);
  for (std::size_t i = 0; i < m; ++i) {
    A(i, 0) = 1.0;
    for (std::size_t j = 0; j + 1 < m; ++j) A(i, j + 1) = std::pow(inv_steps[i] / scale, exponents[j]);
    b(i) = values[i];
  }
  return A.colPivHouseholderQr().solve(b)(0);
}

namespace {

// One trapezoid level with n nodes per axis. By the symmetries of the
// integrand the sum over [-pi, pi)^d reduces to the half-orthant
// m in [0, n/2]^d with per-axis weights 1 (m = 0, n/2) or 2.
struct Level {
  int d;
  int n;
  const QPolynomial* q;
  std::vector<double> cosines;  // cos(2 pi v / n), v = 0..n/2
  std::vector<double> axis_weight;

  Level(int d_, int n_, const QPolynomial& q_) : d(d_), n(n_), q(&q_) {
    const int h = n / 2;
    cosines.resize(static_cast<std::size_t>(h) + 1);
    axis_weight.resize(static_cast<std::size_t>(h) + 1);
    for (int v = 0; v <= h; ++v) {
      cosines[static_cast<std::size_t>(v)] = std::cos(kTwoPi * v / n);
      axis_weight[static_cast<std::size_t>(v)] = (v == 0 || v == h) ? 1.0 : 2.0;
    }
  }

  double integrand(double cos_sum) const { return 1.0 / eval_q(*q, 1.0 - cos_sum / d); }
  double norm() const { return std::pow(static_cast<double>(n), -d); }

  // Sum over non-decreasing tuples, each weighted by its number of distinct
  // permutations. Accumulates the per-value histogram that yields every
  // on-axis displacement, and the product sums for all-equal displacements.
  void sorted_sums(std::span<const int> diag, std::vector<double>& hist, std::vector<double>& diag_sum) const {
    const int h = n / 2;
    const std::size_t nv = static_cast<std::size_t>(h) + 1;
    hist.assign(nv, 0.0);
    diag_sum.assign(diag.size(), 0.0);
    std::vector<double> fact(static_cast<std::size_t>(d) + 1, 1.0);
    for (int i = 1; i <= d; ++i) fact[static_cast<std::size_t>(i)] = fact[static_cast<std::size_t>(i) - 1] * i;
    std::vector<std::vector<double>> diag_cos(diag.size(), std::vector<double>(nv));
    for (std::size_t a = 0; a < diag.size(); ++a)
      for (std::size_t v = 0; v < nv; ++v) diag_cos[a][v] = std::cos(kTwoPi * static_cast<double>(v) * diag[a] / n);

    // Outer value parallelised; partial results are combined in order.
    std::vector<std::vector<double>> part_hist(nv), part_diag(nv);
#pragma omp parallel for schedule(dynamic, 1)
    for (int first = 0; first <= h; ++first) {
      std::vector<double> ph(nv, 0.0), pd(diag.size(), 0.0);
      std::vector<int> m(static_cast<std::size_t>(d), first);
      std::vector<double> cs(static_cast<std::size_t>(d) + 1, 0.0);
      std::vector<double> wt(static_cast<std::size_t>(d) + 1, 1.0);
      std::vector<std::vector<double>> prod(static_cast<std::size_t>(d) + 1, std::vector<double>(diag.size(), 1.0));
      auto leaf = [&]() {
        bool zero = true;
        for (int v : m) zero = zero && v == 0;
        if (zero) return;
        double perms = fact[static_cast<std::size_t>(d)];
        int run = 1;
        for (int i = 1; i <= d; ++i) {
          if (i < d && m[static_cast<std::size_t>(i)] == m[static_cast<std::size_t>(i) - 1]) {
            ++run;
          } else {
            perms /= fact[static_cast<std::size_t>(run)];
            run = 1;
          }
        }
        const double w = integrand(cs[static_cast<std::size_t>(d)]) * wt[static_cast<std::size_t>(d)] * perms;
        for (int v : m) ph[static_cast<std::size_t>(v)] += w / d;
        for (std::size_t a = 0; a < diag.size(); ++a) pd[a] += w * prod[static_cast<std::size_t>(d)][a];
      };
      // depth-first enumeration of m[1..d-1] >= m[0] = first
      auto push = [&](int depth) {
        const auto v = static_cast<std::size_t>(m[static_cast<std::size_t>(depth)]);
        const auto dd = static_cast<std::size_t>(depth);
        cs[dd + 1] = cs[dd] + cosines[v];
        wt[dd + 1] = wt[dd] * axis_weight[v];
        for (std::size_t a = 0; a < diag.size(); ++a) prod[dd + 1][a] = prod[dd][a] * diag_cos[a][v];
      };
      push(0);
      if (d == 1) {
        leaf();
      } else {
        int depth = 1;
        m[1] = first;
        while (depth >= 1) {
          if (m[static_cast<std::size_t>(depth)] > h) {
            --depth;
            if (depth >= 1) ++m[static_cast<std::size_t>(depth)];
            continue;
          }
          push(depth);
          if (depth == d - 1) {
            leaf();
            ++m[static_cast<std::size_t>(depth)];
          } else {
            ++depth;
            m[static_cast<std::size_t>(depth)] = m[static_cast<std::size_t>(depth) - 1];
          }
        }
      }
      part_hist[static_cast<std::size_t>(first)] = std::move(ph);
      part_diag[static_cast<std::size_t>(first)] = std::move(pd);
    }
    for (std::size_t f = 0; f < nv; ++f) {
      for (std::size_t v = 0; v < nv; ++v) hist[v] += part_hist[f][v];
      for (std::size_t a = 0; a < diag.size(); ++a) diag_sum[a] += part_diag[f][a];
    }
  }

  double axis_value(const std::vector<double>& hist, int r) const {
    double s = 0.0;
    for (std::size_t v = 0; v < hist.size(); ++v) s += std::cos(kTwoPi * static_cast<double>(v) * r / n) * hist[v];
    return s * norm();
  }

  // Direct half-orthant sum for a general displacement.
  double general_value(std::span<const int> x) const {
    const int h = n / 2;
    const std::size_t nv = static_cast<std::size_t>(h) + 1;
    std::vector<std::vector<double>> xc(static_cast<std::size_t>(d), std::vector<double>(nv));
    for (int i = 0; i < d; ++i)
      for (std::size_t v = 0; v < nv; ++v)
        xc[static_cast<std::size_t>(i)][v] =
            axis_weight[v] * std::cos(kTwoPi * static_cast<double>(v) * x[static_cast<std::size_t>(i)] / n);
    std::vector<double> part(nv, 0.0);
#pragma omp parallel for schedule(dynamic, 1)
    for (int first = 0; first <= h; ++first) {
      std::vector<int> m(static_cast<std::size_t>(d), 0);
      m[0] = first;
      double acc = 0.0;
      const std::size_t inner = ipow(h + 1, d - 1);
      for (std::size_t t = 0; t < inner; ++t) {
        double cs = 0.0, pr = 1.0;
        bool zero = true;
        for (int i = 0; i < d; ++i) {
          const auto v = static_cast<std::size_t>(m[static_cast<std::size_t>(i)]);
          cs += cosines[v];
          pr *= xc[static_cast<std::size_t>(i)][v];
          zero = zero && v == 0;
        }
        if (!zero) acc += pr * integrand(cs);
        for (int i = d - 1; i >= 1; --i) {
          if (++m[static_cast<std::size_t>(i)] <= h) break;
          m[static_cast<std::size_t>(i)] = 0;
        }
      }
      part[static_cast<std::size_t>(first)] = acc;
    }
    double s = 0.0;
    for (double p : part) s += p;
    return s * norm();
  }
};

enum class Shape { axis, diagonal, general };

Shape classify(const std::vector<int>& y) {
  int nonzero = 0;
  for (int v : y) nonzero += v != 0;
  if (nonzero <= 1) return Shape::axis;
  if (std::all_of(y.begin(), y.end(), [&](int v) { return v == y[0]; })) return Shape::diagonal;
  return Shape::general;
}

void require_valid(const QPolynomial& q, int d) {
  const auto report = validate_model(ModelSpec{q, d});
  if (!report.passed()) throw Error("spectral", "model fails validation: " + report.first_failure()->message);
}

} // namespace

std::vector<GreenInfiniteResult> green_infinite_many(const QPolynomial& q, int d,
                                                     const std::vector<std::vector<int>>& xs,
                                                     const QuadratureSpec& quad) {
  if (quad.nodes < 16) throw Error("spectral", "quadrature needs at least 16 nodes per axis");
  if (quad.levels < 2) throw Error("spectral", "Richardson extrapolation needs at least 2 levels");
  require_valid(q, d);

  std::vector<int> nodes;
  for (int j = 0; j < quad.levels; ++j) {
    const int n = 2 * static_cast<int>(std::lround(quad.nodes * std::pow(quad.growth, j) / 2.0));
    if (!nodes.empty() && n <= nodes.back()) throw Error("spectral", "quadrature growth must increase the node count");
    nodes.push_back(n);
  }

  // Reduce each x to sorted absolute values (exact symmetry of the rule).
  std::vector<std::vector<int>> ys;
  std::vector<Shape> shapes;
  std::vector<int> axis_r, diag_a;
  for (const auto& x : xs) {
    if (static_cast<int>(x.size()) != d) throw Error("spectral", "displacement must have d coordinates");
    std::vector<int> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::abs(x[i]);
    std::sort(y.begin(), y.end());
    shapes.push_back(classify(y));
    if (shapes.back() == Shape::diagonal && std::find(diag_a.begin(), diag_a.end(), y[0]) == diag_a.end())
      diag_a.push_back(y[0]);
    ys.push_back(std::move(y));
  }
  const bool need_sorted = std::any_of(shapes.begin(), shapes.end(), [](Shape s) { return s != Shape::general; });

  std::vector<std::vector<double>> level_values(xs.size());
  for (int n : nodes) {
    Level lv(d, n, q);
    std::vector<double> hist, diag_sum;
    if (need_sorted) lv.sorted_sums(diag_a, hist, diag_sum);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      double v = 0.0;
      switch (shapes[i]) {
        case Shape::axis: v = lv.axis_value(hist, ys[i].back()); break;
        case Shape::diagonal: {
          const auto a = std::find(diag_a.begin(), diag_a.end(), ys[i][0]) - diag_a.begin();
          v = diag_sum[static_cast<std::size_t>(a)] * lv.norm();
          break;
        }
        case Shape::general: v = lv.general_value(ys[i]); break;
      }
      level_values[i].push_back(v);
    }
  }

  std::vector<double> inv(nodes.size()), expo;
  for (std::size_t j = 0; j < nodes.size(); ++j) inv[j] = 1.0 / nodes[j];
  for (int j = 0; j + 1 < quad.levels; ++j) expo.push_back(d - 2 * q.k() + 2 * j);

  std::vector<GreenInfiniteResult> out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    GreenInfiniteResult r;
    r.x = xs[i];
    r.node_counts = nodes;
    r.level_values = level_values[i];
    r.value = richardson(inv, r.level_values, expo);
    const auto m = nodes.size();
    const double coarser = m >= 3 ? richardson(std::span(inv).subspan(1), std::span(r.level_values).subspan(1), expo)
                                  : r.level_values.back();
    r.error_estimate = std::abs(r.value - coarser);
    r.converged = r.error_estimate <= quad.tolerance * std::max(std::abs(r.value), 1e-300);
    out.push_back(std::move(r));
  }
  return out;
}

GreenInfiniteResult green_infinite(const QPolynomial& q, int d, std::span<const int> x, const QuadratureSpec& quad) {
  return green_infinite_many(q, d, {std::vector<int>(x.begin(), x.end())}, quad).front();
}

double DecayResult::ratio_variation(double lo, double hi) const {
  double mn = std::numeric_limits<double>::infinity(), mx = -mn, sum = 0.0;
  int count = 0;
  for (const auto& r : rows) {
    if (r.radius < lo || r.radius > hi) continue;
    mn = std::min(mn, r.ratio);
    mx = std::max(mx, r.ratio);
    sum += r.ratio;
    ++count;
  }
  if (count == 0) throw Error("spectral", "no ratio rows in the requested radius window");
  return (mx - mn) / (sum / count);
}

namespace {

// Least squares ratio = eta + c / |x|^p; returns (eta, standard error of eta).
std::pair<double, double> fit_inverse_radius(const std::vector<const DecayRow*>& rows, int p) {
  const auto m = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd A(m, 2);
  Eigen::VectorXd b(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    A(i, 0) = 1.0;
    A(i, 1) = std::pow(rows[static_cast<std::size_t>(i)]->radius, -p);
    b(i) = rows[static_cast<std::size_t>(i)]->ratio;
  }
  const Eigen::Vector2d coef = A.colPivHouseholderQr().solve(b);
  if (m <= 2) return {coef(0), 0.0};
  const double rss = (A * coef - b).squaredNorm();
  const Eigen::Matrix2d cov = (A.transpose() * A).inverse() * (rss / static_cast<double>(m - 2));
  return {coef(0), std::sqrt(cov(0, 0))};
}

// Fit over all rows; the error is the larger of the regression standard
// error and the shift of the intercept when only the outer half is fitted,
// which captures correction terms the 1/|x|^p model leaves out.
std::pair<double, double> fit_direction(const std::vector<const DecayRow*>& rows, int p) {
  auto [eta, se] = fit_inverse_radius(rows, p);
  if (rows.size() >= 4) {
    const double mid = 0.5 * (rows.front()->radius + rows.back()->radius);
    std::vector<const DecayRow*> outer;
    for (const auto* r : rows)
      if (r->radius >= mid) outer.push_back(r);
    if (outer.size() >= 2) se = std::max(se, std::abs(fit_inverse_radius(outer, p).first - eta));
  }
  return {eta, se};
}

} // namespace

DecayResult decay_constant(const QPolynomial& q, int d, int r_min, int r_max, const QuadratureSpec& quad,
                           int fit_power) {
  if (r_min < 1 || r_max < 2 * r_min) throw Error("spectral", "decay radii need r_min >= 1 and r_max >= 2 r_min");
  if (fit_power < 1) throw Error("spectral", "decay fit power must be >= 1");
  DecayResult res;
  std::vector<std::vector<int>> xs;
  std::vector<std::string> dirs;
  for (int r = r_min; r <= r_max; ++r) {
    std::vector<int> x(static_cast<std::size_t>(d), 0);
    x[0] = r;
    xs.push_back(x);
    dirs.emplace_back("axis");
  }
  const double sd = std::sqrt(static_cast<double>(d));
  for (int a = static_cast<int>(std::ceil(r_min / sd)); a * sd <= r_max; ++a) {
    xs.emplace_back(static_cast<std::size_t>(d), a);
    dirs.emplace_back("diagonal");
  }
  QuadratureSpec qs = quad;
  qs.nodes = std::max(quad.nodes, 2 * ((8 * r_max + 1) / 2));
  res.node_floor = qs.nodes;
  res.fit_power = fit_power;
  const auto greens = green_infinite_many(q, d, xs, qs);
  const double qk = q.coeff(q.k());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    DecayRow row;
    row.direction = dirs[i];
    row.x = xs[i];
    double r2 = 0.0;
    for (int v : xs[i]) r2 += static_cast<double>(v) * v;
    row.radius = std::sqrt(r2);
    row.green = greens[i].value;
    row.green_error = greens[i].error_estimate;
    row.ratio = qk * row.green * std::pow(row.radius, d - 2 * q.k());
    res.rows.push_back(std::move(row));
  }
  std::vector<const DecayRow*> axis, diag;
  for (const auto& r : res.rows) (r.direction == "axis" ? axis : diag).push_back(&r);
  std::tie(res.eta_axis, res.eta_axis_error) = fit_direction(axis, fit_power);
  if (diag.size() >= 2) {
    std::tie(res.eta_diagonal, res.eta_diagonal_error) = fit_direction(diag, fit_power);
    res.eta = 0.5 * (res.eta_axis + res.eta_diagonal);
    res.eta_error = 0.5 * std::hypot(res.eta_axis_error, res.eta_diagonal_error);
  } else {
    res.eta = res.eta_axis;
    res.eta_error = res.eta_axis_error;
  }
  return res;
}

struct SpectralSampler::Impl {
  fft::Plan plan;
  std::vector<double> stddev;      // per stored half-spectrum coefficient
  std::vector<std::int64_t> partner;  // conjugate partner within the stored half, or -1
  std::size_t n_half = 0;
};

SpectralSampler::SpectralSampler(const QPolynomial& q, const TorusGrid& grid) : grid_(grid), impl_(std::make_unique<Impl>()) {
  if (!(grid.eps > 0.0)) throw Error("spectral", "zero mode singular: sampling needs eps > 0");
  const auto symbol = SymbolGrid::build(q, grid);
  const int L = grid.L, d = grid.d, H = L / 2 + 1;
  const std::size_t n = grid.sites();
  impl_->n_half = n / static_cast<std::size_t>(L) * static_cast<std::size_t>(H);
  impl_->stddev.resize(impl_->n_half);
  impl_->partner.assign(impl_->n_half, -1);
  impl_->plan = fft::plan_c2r(d, L);
  std::vector<int> m(static_cast<std::size_t>(d), 0), neg(static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < impl_->n_half; ++i) {
    const double var = 1.0 / (static_cast<double>(n) * symbol.at(m));
    const int last = m.back();
    const bool self_plane = last == 0 || (L % 2 == 0 && last == L / 2);
    if (self_plane) {
      for (int a = 0; a < d; ++a) neg[static_cast<std::size_t>(a)] = (L - m[static_cast<std::size_t>(a)]) % L;
      std::size_t j = 0;
      for (int a = 0; a < d - 1; ++a) j = j * static_cast<std::size_t>(L) + static_cast<std::size_t>(neg[static_cast<std::size_t>(a)]);
      j = j * static_cast<std::size_t>(H) + static_cast<std::size_t>(last);
      impl_->partner[i] = static_cast<std::int64_t>(j);
    }
    impl_->stddev[i] = (impl_->partner[i] == static_cast<std::int64_t>(i)) ? std::sqrt(var) : std::sqrt(var / 2.0);
    for (int a = d - 1; a >= 0; --a) {
      const int lim = a == d - 1 ? H : L;
      if (++m[static_cast<std::size_t>(a)] < lim) break;
      m[static_cast<std::size_t>(a)] = 0;
    }
  }
}

SpectralSampler::~SpectralSampler() = default;

void SpectralSampler::draw_into(std::uint64_t seed, std::uint64_t index, std::span<double> out) const {
  if (out.size() != grid_.sites()) throw Error("spectral", "output span must hold L^d values");
  RandomStream rng(seed, "spectral", index);
  auto coef = fft::alloc_complex(impl_->n_half);
  auto real = fft::alloc_real(grid_.sites());
  for (std::size_t i = 0; i < impl_->n_half; ++i) {
    const auto p = impl_->partner[i];
    const double s = impl_->stddev[i];
    if (p == static_cast<std::int64_t>(i)) {
      coef[i][0] = s * rng.normal();
      coef[i][1] = 0.0;
    } else if (p < 0 || p > static_cast<std::int64_t>(i)) {
      coef[i][0] = s * rng.normal();
      coef[i][1] = s * rng.normal();
      if (p > 0) {
        coef[p][0] = coef[i][0];
        coef[p][1] = -coef[i][1];
      }
    }
  }
  fftw_execute_dft_c2r(impl_->plan.get(), coef.get(), real.get());
  std::copy(real.get(), real.get() + grid_.sites(), out.begin());
}

LatticeField SpectralSampler::draw(std::uint64_t seed, std::uint64_t index) const {
  LatticeField f(grid_);
  draw_into(seed, index, f.values());
  return f;
}

LatticeField spectral_sample(const TorusGrid& grid, const QPolynomial& q, std::uint64_t seed) {
  return SpectralSampler(q, grid).draw(seed, 0);
}

CovarianceAccumulator::CovarianceAccumulator(TorusGrid grid, std::vector<std::vector<int>> displacements)
    : grid_(grid), displacements_(std::move(displacements)) {
  if (displacements_.empty()) throw Error("spectral", "need at least one displacement");
  std::vector<int> y(static_cast<std::size_t>(grid.d));
  for (const auto& x : displacements_) {
    if (static_cast<int>(x.size()) != grid.d) throw Error("spectral", "displacement must have d coordinates");
    std::vector<std::size_t> map(grid.sites());
    for (std::size_t i = 0; i < grid.sites(); ++i) {
      const auto c = grid.coords(i);
      for (int a = 0; a < grid.d; ++a) y[static_cast<std::size_t>(a)] = c[static_cast<std::size_t>(a)] + x[static_cast<std::size_t>(a)];
      map[i] = grid.index(y);
    }
    shifted_.push_back(std::move(map));
  }
}

void CovarianceAccumulator::add(std::span<const double> field) {
  if (field.size() != grid_.sites()) throw Error("spectral", "field size does not match the grid");
  for (const auto& map : shifted_) {
    double s = 0.0;
    for (std::size_t i = 0; i < field.size(); ++i) s += field[i] * field[map[i]];
    per_sample_.push_back(s / static_cast<double>(field.size()));
  }
}

std::vector<CovarianceEstimate> CovarianceAccumulator::estimate(std::size_t blocks) const {
  const std::size_t n = samples();
  if (n < 2) throw Error("spectral", "covariance estimate needs at least 2 samples");
  if (blocks == 0 || blocks > n) blocks = n;
  if (blocks < 2) throw Error("spectral", "jackknife needs at least 2 blocks");
  const std::size_t nd = displacements_.size();
  std::vector<CovarianceEstimate> out;
  for (std::size_t k = 0; k < nd; ++k) {
    std::vector<double> block_sum(blocks, 0.0);
    std::vector<std::size_t> block_n(blocks, 0);
    double total = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t b = s * blocks / n;
      const double v = per_sample_[s * nd + k];
      block_sum[b] += v;
      ++block_n[b];
      total += v;
    }
    std::vector<double> loo(blocks);
    double mean_loo = 0.0;
    for (std::size_t b = 0; b < blocks; ++b) {
      loo[b] = (total - block_sum[b]) / static_cast<double>(n - block_n[b]);
      mean_loo += loo[b];
    }
    mean_loo /= static_cast<double>(blocks);
    double var = 0.0;
    for (double v : loo) var += (v - mean_loo) * (v - mean_loo);
    var *= static_cast<double>(blocks - 1) / static_cast<double>(blocks);
    out.push_back({displacements_[k], total / static_cast<double>(n), std::sqrt(var)});
  }
  return out;
}

std::vector<CovarianceEstimate> empirical_covariance(std::span<const LatticeField> samples,
                                                     const std::vector<std::vector<int>>& displacements,
                                                     std::size_t blocks) {
  if (samples.size() < 2) throw Error("spectral", "covariance estimate needs at least 2 samples");
  CovarianceAccumulator acc(samples.front().grid(), displacements);
  for (const auto& s : samples) acc.add(s);
  return acc.estimate(blocks);
}

std::vector<std::vector<int>> canonical_displacements(int d, double radius) {
  std::vector<std::vector<int>> out;
  const int rmax = static_cast<int>(std::floor(radius));
  std::vector<int> x(static_cast<std::size_t>(d), 0);
  while (true) {
    double r2 = 0.0;
    for (int v : x) r2 += static_cast<double>(v) * v;
    if (r2 <= radius * radius + 1e-12) out.push_back(x);
    int a = d - 1;
    while (a >= 0 && x[static_cast<std::size_t>(a)] == rmax) --a;
    if (a < 0) break;
    ++x[static_cast<std::size_t>(a)];
    for (int b = a + 1; b < d; ++b) x[static_cast<std::size_t>(b)] = x[static_cast<std::size_t>(a)];
  }
  return out;
}

CovarianceAgreement compare_covariance(const std::vector<CovarianceEstimate>& est, const GreenTable& table) {
  CovarianceAgreement agg;
  for (const auto& e : est) {
    if (!(e.std_error > 0.0)) continue;
    const double z = (e.value - table.at(e.displacement)) / e.std_error;
    agg.max_abs_z = std::max(agg.max_abs_z, std::abs(z));
    agg.chi_square += z * z;
    ++agg.dof;
  }
  if (agg.dof > 0) {
    boost::math::chi_squared dist(agg.dof);
    agg.p_value = boost::math::cdf(boost::math::complement(dist, agg.chi_square));
  }
  return agg;
}

void write_green_csv(std::ostream& os, const GreenTable& table) {
  const auto& g = table.grid();
  os << "# d=" << g.d << " L=" << g.L << " eps=" << g.eps << " q=" << table.q().to_string() << '\n';
  for (int a = 0; a < g.d; ++a) os << 'x' << a + 1 << ',';
  os << "G\n";
  os.precision(17);
  for (std::size_t i = 0; i < g.sites(); ++i) {
    for (int c : reduce_displacement(g.coords(i), g.L)) os << c << ',';
    os << table.values()[i] << '\n';
  }
}

void write_decay_csv(std::ostream& os, const QPolynomial& q, int d, const DecayResult& result) {
  os.precision(12);
  os << "# d=" << d << " q=" << q.to_string() << " nodes>=" << result.node_floor
     << " fit=eta+c/|x|^" << result.fit_power << '\n';
  os << "# eta=" << result.eta << " eta_error=" << result.eta_error << " eta_axis=" << result.eta_axis
     << " eta_diagonal=" << result.eta_diagonal << '\n';
  os << "direction,radius,";
  for (int a = 0; a < d; ++a) os << 'x' << a + 1 << ',';
  os << "G,G_error,ratio\n";
  for (const auto& r : result.rows) {
    os << r.direction << ',' << r.radius << ',';
    for (int c : r.x) os << c << ',';
    os << r.green << ',' << r.green_error << ',' << r.ratio << '\n';
  }
}

} // namespace entrep
