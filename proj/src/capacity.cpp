#include "entrep/capacity.hpp"

#include "entrep/error.hpp"
#include "entrep/kernels.hpp"
#include "entrep/spectral.hpp"
#include "csv_header.hpp"
#include "fft.hpp"

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss.hpp>
#include <json.hpp>
#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <limits>
#include <numeric>
#include <ostream>

namespace entrep {

namespace {

constexpr const char* kModule = "capacity";

bool divides(double step, double length) {
  const double r = length / step;
  return r >= 1.0 - 1e-12 && std::abs(r - std::round(r)) < 1e-9;
}

bool parallel_enabled() { return kernels::default_backend() == kernels::Backend::openmp; }

// Sum in fixed blocks so the result does not depend on the thread count.
template <class F>
double blocked_sum(std::size_t n, F&& term) {
  const std::size_t block = kernels::kReductionBlock;
  const std::size_t blocks = (n + block - 1) / block;
  std::vector<double> partial(blocks, 0.0);
  const bool par = parallel_enabled();
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t b = 0; b < blocks; ++b) {
    double s = 0.0;
    const std::size_t end = std::min(n, (b + 1) * block);
    for (std::size_t i = b * block; i < end; ++i) s += term(i);
    partial[b] = s;
  }
  double s = 0.0;
  for (double v : partial) s += v;
  return s;
}

std::size_t ipow(std::size_t b, int e) {
  std::size_t r = 1;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}

// Node layout of the padded obstacle grid and the site lists the operator
// (-Delta_h)^k needs.
struct ObstacleGrid {
  int d = 0, k = 0, M = 0, side = 0;
  double h = 0.0;
  std::size_t total = 0;
  std::vector<std::ptrdiff_t> strides;
  std::vector<std::size_t> free_sites;   // |m| < R/h
  std::vector<unsigned char> obstacle;   // per free site
  std::vector<double> radius;            // per free site, in units of h
  // levels[j]: sites where the j-th power (1 <= j < k) must be known.
  std::vector<std::vector<std::size_t>> levels;

  explicit ObstacleGrid(const ObstacleProblem& p) {
    d = p.d;
    k = p.k;
    h = p.h_step;
    M = p.half_extent();
    side = 2 * M + 1;
    total = ipow(static_cast<std::size_t>(side), d);
    strides.assign(static_cast<std::size_t>(d), 1);
    for (int i = d - 2; i >= 0; --i) strides[i] = strides[i + 1] * side;
    const double rn = p.R / h;
    const int an = static_cast<int>(std::floor(p.half_width / h + 1e-9));
    levels.assign(static_cast<std::size_t>(k), {});
    std::vector<int> m(static_cast<std::size_t>(d), -M);
    for (std::size_t s = 0; s < total; ++s) {
      double r2 = 0.0;
      int sup = 0;
      bool interior = true;
      for (int i = 0; i < d; ++i) {
        r2 += double(m[i]) * m[i];
        sup = std::max(sup, std::abs(m[i]));
        if (std::abs(m[i]) == M) interior = false;
      }
      const double r = std::sqrt(r2);
      if (r < rn) {
        free_sites.push_back(s);
        obstacle.push_back(sup <= an ? 1 : 0);
        radius.push_back(r);
      }
      for (int j = 1; j < k; ++j)
        if (interior && r < rn + (k - j)) levels[j].push_back(s);
      for (int i = d - 1; i >= 0; --i) {
        if (++m[i] <= M) break;
        m[i] = -M;
      }
    }
  }

  // (-Delta_h) on `sites`: out(s) = (2d in(s) - sum_nb in) / h^2.
  void neg_laplacian(const std::vector<std::size_t>& sites, const std::vector<double>& in,
                     std::vector<double>& out) const {
    const double inv_h2 = 1.0 / (h * h);
    const double center = 2.0 * d;
    const bool par = parallel_enabled();
#pragma omp parallel for schedule(static) if (par)
    for (std::size_t t = 0; t < sites.size(); ++t) {
      const std::size_t s = sites[t];
      double nb = 0.0;
      for (int i = 0; i < d; ++i) nb += in[s - strides[i]] + in[s + strides[i]];
      out[s] = (center * in[s] - nb) * inv_h2;
    }
  }
};

// Applies (-Delta_h)^k to u (values on the free sites, zero elsewhere) and
// returns it on the free sites.
class PowerLaplacian {
public:
  explicit PowerLaplacian(const ObstacleGrid& g) : g_(g) {
    for (int j = 0; j <= g.k; ++j) buffers_.emplace_back(g.total, 0.0);
  }

  void apply(const std::vector<double>& u, std::vector<double>& out) {
    auto& b0 = buffers_[0];
    const auto& fs = g_.free_sites;
    for (std::size_t t = 0; t < fs.size(); ++t) b0[fs[t]] = u[t];
    for (int j = 1; j < g_.k; ++j) g_.neg_laplacian(g_.levels[j], buffers_[j - 1], buffers_[j]);
    g_.neg_laplacian(fs, buffers_[g_.k - 1], buffers_[g_.k]);
    out.resize(fs.size());
    const auto& last = buffers_[g_.k];
    for (std::size_t t = 0; t < fs.size(); ++t) out[t] = last[fs[t]];
  }

private:
  const ObstacleGrid& g_;
  std::vector<std::vector<double>> buffers_;
};

double symmetry_defect(const ObstacleGrid& g, const std::vector<double>& full) {
  if (g.d < 2) return 0.0;
  double defect = 0.0;
  std::vector<int> m(static_cast<std::size_t>(g.d), -g.M);
  for (std::size_t s = 0; s < g.total; ++s) {
    std::ptrdiff_t swapped = 0, flipped = 0;
    for (int i = 0; i < g.d; ++i) {
      const int mi = m[i] + g.M;
      const int swap_i = (i == 0 ? m[1] : i == 1 ? m[0] : m[i]) + g.M;
      swapped += swap_i * g.strides[i];
      flipped += (i == 0 ? g.M - m[0] : mi) * g.strides[i];
    }
    defect = std::max({defect, std::abs(full[s] - full[swapped]), std::abs(full[s] - full[flipped])});
    for (int i = g.d - 1; i >= 0; --i) {
      if (++m[i] <= g.M) break;
      m[i] = -g.M;
    }
  }
  return defect;
}


constexpr double kEigenResidualLimit = 1e-9;

// max over eigenpairs of |A v - mu v| / |A|_max, on a spread of columns, and
// of |sum_i (v_i . 1)^2 - n| / n, which checks orthonormality collectively.
double eigenpair_residual(const std::vector<double>& A, const std::vector<double>& vecs,
                          const std::vector<double>& mu) {
  const std::size_t n = mu.size();
  double amax = 0.0;
  for (double v : A) amax = std::max(amax, std::abs(v));
  double worst = 0.0;
  const std::size_t stride = std::max<std::size_t>(1, n / 16);
  for (std::size_t i = 0; i < n; i += stride) {
    const double* v = vecs.data() + i * n;
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < n; ++c) s += A[r * n + c] * v[c];
      worst = std::max(worst, std::abs(s - mu[i] * v[r]) / amax);
    }
  }
  double parseval = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t r = 0; r < n; ++r) s += vecs[i * n + r];
    parseval += s * s;
  }
  return std::max(worst, std::abs(parseval - double(n)) / double(n));
}

// One small decomposition per process decides whether dsyevd is trusted.
bool lapack_eigensolver_ok() {
  static const bool ok = [] {
    const std::size_t n = 160;
    std::vector<double> A(n * n), v(n * n), mu(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) A[i * n + j] = i == j ? 2.0 : 1.0 / (1.0 + std::abs(double(i) - double(j)));
    v = A;
    const lapack_int info = LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'U', static_cast<lapack_int>(n), v.data(),
                                           static_cast<lapack_int>(n), mu.data());
    if (info != 0) return false;
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t r = 0; r < n; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < n; ++c) s += A[r * n + c] * v[i * n + c];
        worst = std::max(worst, std::abs(s - mu[i] * v[i * n + r]));
      }
    return worst < 1e-10;
  }();
  return ok;
}

} // namespace

void ObstacleProblem::validate() const {
  if (k < 1) throw Error(kModule, "k must be >= 1");
  if (d < 2 * k + 1) throw Error(kModule, "need d >= 2k+1");
  if (!(h_step > 0.0) || !(half_width > 0.0)) throw Error(kModule, "h_step and half_width must be positive");
  if (!(R > std::sqrt(double(d)) * half_width)) throw Error(kModule, "R must exceed sqrt(d) * half_width");
  if (!divides(h_step, 2.0 * half_width) || !divides(h_step, 2.0 * R))
    throw Error(kModule, "h_step must divide 2*half_width and 2*R");
}

int ObstacleProblem::half_extent() const { return static_cast<int>(std::ceil(R / h_step - 1e-9)) + k; }

double ObstacleSolution::at(std::span<const int> m) const {
  std::size_t idx = 0;
  const std::size_t side = static_cast<std::size_t>(2 * M + 1);
  for (int mi : m) {
    if (std::abs(mi) > M) return 0.0;
    idx = idx * side + static_cast<std::size_t>(mi + M);
  }
  return u[idx];
}

double interpolate(const ObstacleSolution& s, std::span<const double> x) {
  const int d = s.problem.d;
  std::vector<int> base(static_cast<std::size_t>(d));
  std::vector<double> frac(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) {
    const double g = x[i] / s.problem.h_step;
    base[i] = static_cast<int>(std::floor(g));
    frac[i] = g - base[i];
  }
  double v = 0.0;
  std::vector<int> m(static_cast<std::size_t>(d));
  for (unsigned corner = 0; corner < (1u << d); ++corner) {
    double w = 1.0;
    for (int i = 0; i < d; ++i) {
      const bool up = (corner >> i) & 1u;
      m[i] = base[i] + (up ? 1 : 0);
      w *= up ? frac[i] : 1.0 - frac[i];
    }
    if (w != 0.0) v += w * s.at(m);
  }
  return v;
}

ObstacleSolution solve_obstacle(const ObstacleProblem& p, const ObstacleOptions& opts, const ObstacleSolution* warm) {
  p.validate();
  if (warm && (warm->problem.d != p.d || warm->problem.k != p.k))
    throw Error(kModule, "warm start has a different (k, d)");
  const ObstacleGrid grid(p);
  PowerLaplacian op(grid);
  const std::size_t n = grid.free_sites.size();
  const double c = std::pow(p.h_step, p.d) / std::pow(2.0 * p.d, p.k);
  const double lipschitz = 2.0 * c * std::pow(4.0 * p.d / (p.h_step * p.h_step), p.k);
  const double step = 1.0 / lipschitz;

  auto project = [&](std::vector<double>& v) {
    for (std::size_t t = 0; t < n; ++t)
      if (grid.obstacle[t] && v[t] < 1.0) v[t] = 1.0;
  };

  std::vector<double> x(n, 0.0);
  if (warm) {
    std::vector<int> m(static_cast<std::size_t>(p.d));
    std::vector<double> pos(static_cast<std::size_t>(p.d));
    for (std::size_t t = 0; t < n; ++t) {
      std::size_t s = grid.free_sites[t];
      for (int i = p.d - 1; i >= 0; --i) {
        pos[i] = (static_cast<int>(s % grid.side) - grid.M) * p.h_step;
        s /= grid.side;
      }
      x[t] = interpolate(*warm, pos);
    }
  }
  project(x);

  std::vector<double> y = x, x_new(n), g(n);
  double t_mom = 1.0;
  double pg0 = 0.0, pg = 0.0;
  int it = 0;
  bool converged = false;
  for (; it < opts.max_iterations; ++it) {
    op.apply(y, g);
    for (std::size_t i = 0; i < n; ++i) x_new[i] = y[i] - step * 2.0 * c * g[i];
    project(x_new);
    pg = lipschitz * std::sqrt(blocked_sum(n, [&](std::size_t i) {
      const double e = y[i] - x_new[i];
      return e * e;
    }));
    if (it == 0) pg0 = pg;
    if (pg <= opts.tolerance * pg0 || pg == 0.0) {
      x.swap(x_new);
      converged = true;
      ++it;
      break;
    }
    const double restart = blocked_sum(n, [&](std::size_t i) { return (y[i] - x_new[i]) * (x_new[i] - x[i]); });
    if (restart > 0.0) {
      t_mom = 1.0;
      y = x_new;
      x.swap(x_new);
      continue;
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_mom * t_mom));
    const double beta = (t_mom - 1.0) / t_next;
    for (std::size_t i = 0; i < n; ++i) y[i] = x_new[i] + beta * (x_new[i] - x[i]);
    x.swap(x_new);
    t_mom = t_next;
  }

  ObstacleSolution sol;
  sol.problem = p;
  sol.M = grid.M;
  sol.iterations = it;
  sol.pg_initial = pg0;
  sol.pg_final = pg;
  sol.converged = converged;

  op.apply(x, g);
  sol.value = c * blocked_sum(n, [&](std::size_t i) { return x[i] * g[i]; });
  sol.u.assign(grid.total, 0.0);
  for (std::size_t t = 0; t < n; ++t) sol.u[grid.free_sites[t]] = x[t];

  KKTReport& kkt = sol.kkt;
  double scale = 0.0;
  for (double v : g) scale = std::max(scale, std::abs(v));
  kkt.scale = scale;
  const double inv = scale > 0.0 ? 1.0 / scale : 0.0;
  const double inner = p.R / p.h_step - p.k;
  double compl_sum = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    if (grid.obstacle[t]) {
      kkt.feasibility = std::max(kkt.feasibility, 1.0 - x[t]);
      kkt.contact_deviation = std::max(kkt.contact_deviation, std::abs(x[t] - 1.0));
      kkt.dual_sign = std::max(kkt.dual_sign, -g[t] * inv);
      compl_sum += std::abs(x[t] - 1.0) * std::abs(g[t]);
    } else if (grid.radius[t] < inner) {
      kkt.stationarity = std::max(kkt.stationarity, std::abs(g[t]) * inv);
    }
  }
  kkt.complementarity = compl_sum * inv;
  sol.symmetry_defect = symmetry_defect(grid, sol.u);
  return sol;
}

namespace {

// Observed order p from three values at steps h1 > h2 > h3:
//   (v1 - v2)/(v2 - v3) = (h1^p - h2^p)/(h2^p - h3^p).
double observed_order(double h1, double h2, double h3, double ratio) {
  auto f = [&](double p) {
    return (std::pow(h1, p) - std::pow(h2, p)) / (std::pow(h2, p) - std::pow(h3, p)) - ratio;
  };
  double lo = 0.05, hi = 8.0;
  if (f(lo) * f(hi) > 0.0) return std::numeric_limits<double>::quiet_NaN();
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(lo) * f(mid) <= 0.0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

// Least-squares intercept and its standard error for y = a + b x.
std::pair<double, double> line_intercept(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  const double b = sxy / sxx;
  const double a = my - b * mx;
  double se = 0.0;
  if (n > 2) {
    double rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) rss += std::pow(y[i] - a - b * x[i], 2);
    se = std::sqrt(rss / (n - 2) * (1.0 / n + mx * mx / sxx));
  }
  return {a, se};
}

} // namespace

CapacityExtrapolation extrapolate_capacity(int k, int d, const std::vector<CapacitySample>& h_sequence,
                                           const std::vector<CapacitySample>& R_sequence, RadiusFit fit) {
  CapacityExtrapolation e;
  e.fit = fit;
  e.raw = h_sequence;
  e.raw.insert(e.raw.end(), R_sequence.begin(), R_sequence.end());
  auto refuse = [&](std::string why) {
    e.refused = true;
    e.reason = std::move(why);
    return e;
  };
  if (h_sequence.size() < 3) return refuse("need at least 3 resolutions");
  if (R_sequence.size() < 2) return refuse("need at least 2 radii");

  auto hs = h_sequence;
  std::sort(hs.begin(), hs.end(), [](const auto& a, const auto& b) { return a.h_step > b.h_step; });
  for (const auto& s : hs)
    if (std::abs(s.R - hs.front().R) > 1e-12) return refuse("h sequence must share one R");
  for (std::size_t i = 1; i < hs.size(); ++i)
    if (!(hs[i].h_step < hs[i - 1].h_step)) return refuse("h values must be distinct");
  const std::size_t n = hs.size();
  const double sign = hs[1].value - hs[0].value;
  for (std::size_t i = 1; i < n; ++i) {
    const double diff = hs[i].value - hs[i - 1].value;
    if (diff * sign <= 0.0) return refuse("h sequence is not strictly monotone");
    if (i >= 2 && std::abs(diff) >= std::abs(hs[i - 1].value - hs[i - 2].value))
      return refuse("h increments do not shrink");
  }
  const auto& a = hs[n - 3];
  const auto& b = hs[n - 2];
  const auto& c = hs[n - 1];
  const double p = observed_order(a.h_step, b.h_step, c.h_step, (a.value - b.value) / (b.value - c.value));
  if (!std::isfinite(p)) return refuse("no observed order in (0.05, 8)");
  const double C = (b.value - c.value) / (std::pow(b.h_step, p) - std::pow(c.h_step, p));
  e.fixed_R = c.R;
  e.order = p;
  e.h_limit = c.value - C * std::pow(c.h_step, p);
  e.h_correction = e.h_limit - c.value;
  // Two-point first-order estimate as the comparison for the error bar.
  const double first_order = c.value - (b.value - c.value) / (b.h_step / c.h_step - 1.0);
  e.h_error = std::max(std::abs(e.h_limit - first_order), 0.1 * std::abs(e.h_correction));

  auto rs = R_sequence;
  std::sort(rs.begin(), rs.end(), [](const auto& x, const auto& y) { return x.R < y.R; });
  for (const auto& s : rs)
    if (std::abs(s.h_step - c.h_step) > 1e-12) return refuse("R sequence must use the finest h");
  for (std::size_t i = 1; i < rs.size(); ++i) {
    if (!(rs[i].R > rs[i - 1].R)) return refuse("R values must be distinct");
    if (!(rs[i].value < rs[i - 1].value)) return refuse("R sequence is not decreasing");
  }
  std::vector<double> xs, ys, inv;
  for (const auto& s : rs) {
    xs.push_back(std::pow(s.R, 2.0 * k - d));
    ys.push_back(s.value);
    inv.push_back(1.0 / s.value);
  }
  const auto [add, add_se] = line_intercept(xs, ys);
  const auto [rec, rec_se] = line_intercept(xs, inv);
  e.R_limit_additive = add;
  e.R_limit_reciprocal = 1.0 / rec;
  const double chosen = fit == RadiusFit::additive ? e.R_limit_additive : e.R_limit_reciprocal;
  const double chosen_se = fit == RadiusFit::additive ? add_se : rec_se / (rec * rec);
  e.R_correction = chosen - rs.back().value;
  e.R_error = std::max(chosen_se, std::abs(e.R_limit_additive - e.R_limit_reciprocal));
  // The h correction is transferred to R = infinity by its relative size.
  e.value = chosen * (1.0 + e.h_correction / c.value);
  e.error = std::hypot(e.h_error, e.R_error);
  return e;
}

std::size_t KernelOperator::cells() const { return ipow(static_cast<std::size_t>(resolution), d); }

double KernelOperator::cell_volume() const { return std::pow(2.0 * half_width / resolution, d); }

std::vector<double> KernelOperator::cell_center(std::size_t i) const {
  std::vector<double> c(static_cast<std::size_t>(d));
  const double s = 2.0 * half_width / resolution;
  for (int a = d - 1; a >= 0; --a) {
    c[a] = -half_width + s * (static_cast<double>(i % resolution) + 0.5);
    i /= resolution;
  }
  return c;
}

std::vector<double> KernelOperator::apply(std::span<const double> f) const {
  const std::size_t n = cells();
  if (f.size() != n) throw Error(kModule, "vector size does not match the kernel");
  std::vector<double> out(n);
  const double vol = cell_volume();
  const bool par = parallel_enabled();
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = matrix.data() + i * n;
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += row[j] * f[j];
    out[i] = vol * s;
  }
  return out;
}

double self_cell_average(double alpha, int d) {
  if (d < 1 || !(alpha > -d)) throw Error(kModule, "self_cell_average needs alpha > -d");
  static std::mutex mutex;
  static std::map<std::pair<double, int>, double> cache;
  std::lock_guard lock(mutex);
  if (auto it = cache.find({alpha, d}); it != cache.end()) return it->second;

  // E|x-y|^alpha = int_{[-1,1]^d} |z|^alpha prod(1-|z_i|) dz
  //             = 2^d d int_0^1 t^{alpha+d-1} (1-t) int_{[0,1]^{d-1}} prod(1 - t s_i) (1+|s|^2)^{alpha/2} ds dt
  // on the pyramid where z_1 = t is the largest coordinate. For non-integer
  // beta = alpha+d-1 the substitution t = tau^{1/(beta+1)} absorbs t^beta.
  using Rule = boost::math::quadrature::gauss<double, 20>;
  const auto& nodes = Rule::abscissa();
  const auto& wts = Rule::weights();
  std::vector<double> x, w;  // 20-point rule on [0,1]
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double sgn[2] = {1.0, -1.0};
    for (double s : sgn) {
      if (nodes[i] == 0.0 && s < 0) continue;
      x.push_back(0.5 * (1.0 + s * nodes[i]));
      w.push_back(0.5 * wts[i]);
    }
  }
  const double beta = alpha + d - 1;
  const bool integer_beta = std::abs(beta - std::round(beta)) < 1e-12 && beta >= 0.0;
  const int m = d - 1;
  const std::size_t q = x.size();
  const std::size_t count = ipow(q, m);
  double total = 0.0;
  std::vector<std::size_t> idx(static_cast<std::size_t>(m), 0);
  for (std::size_t c = 0; c < count; ++c) {
    double ws = 1.0, s2 = 0.0;
    for (int a = 0; a < m; ++a) {
      ws *= w[idx[a]];
      s2 += x[idx[a]] * x[idx[a]];
    }
    const double radial = std::pow(1.0 + s2, 0.5 * alpha);
    double tsum = 0.0;
    for (std::size_t j = 0; j < q; ++j) {
      double t, wt;
      if (integer_beta) {
        t = x[j];
        wt = w[j] * std::pow(t, beta);
      } else {
        t = std::pow(x[j], 1.0 / (beta + 1.0));
        wt = w[j] / (beta + 1.0);
      }
      double prod = 1.0 - t;
      for (int a = 0; a < m; ++a) prod *= 1.0 - t * x[idx[a]];
      tsum += wt * prod;
    }
    total += ws * radial * tsum;
    for (int a = m - 1; a >= 0; --a) {
      if (++idx[a] < q) break;
      idx[a] = 0;
    }
  }
  const double value = std::pow(2.0, d) * d * total;
  cache.emplace(std::make_pair(alpha, d), value);
  return value;
}

namespace {

// Gauss-Legendre rule mapped to [0,1].
struct UnitRule {
  std::vector<double> x, w;
  explicit UnitRule(int points) {
    // Golub-Welsch on the Legendre Jacobi matrix.
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(points, points);
    for (int i = 1; i < points; ++i) J(i, i - 1) = J(i - 1, i) = i / std::sqrt(4.0 * i * i - 1.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    for (int i = 0; i < points; ++i) {
      x.push_back(0.5 * (1.0 + es.eigenvalues()(i)));
      w.push_back(es.eigenvectors()(0, i) * es.eigenvectors()(0, i));
    }
  }
};

// Tensor-product quadrature over [0,1]^m of f(point).
template <class F>
double tensor_quadrature(const UnitRule& rule, int m, F&& f) {
  const std::size_t q = rule.x.size();
  std::vector<std::size_t> idx(static_cast<std::size_t>(m), 0);
  std::vector<double> pt(static_cast<std::size_t>(m));
  const std::size_t count = ipow(q, m);
  double total = 0.0;
  for (std::size_t c = 0; c < count; ++c) {
    double w = 1.0;
    for (int a = 0; a < m; ++a) {
      pt[a] = rule.x[idx[a]];
      w *= rule.w[idx[a]];
    }
    total += w * f(pt);
    for (int a = m - 1; a >= 0; --a) {
      if (++idx[a] < q) break;
      idx[a] = 0;
    }
  }
  return total;
}

// E|delta + x - y|^alpha for x, y uniform in the unit cube, delta integer.
// With z = x - y the density is prod(1 - |z_i|) on [-1,1]^d. In u = delta + z
// the domain splits into unit boxes on which the density is affine per axis;
// boxes with the origin as a vertex are integrated on the d pyramids
// {v_j = max} with v_j = t, v_i = t s_i, where t^{alpha+d-1} is integrable
// and the rest is smooth.
double pair_average(double alpha, const std::vector<int>& delta) {
  const int d = static_cast<int>(delta.size());
  static const UnitRule fine(16), coarse(8);
  const double beta = alpha + d - 1;
  const bool integer_beta = beta >= 0.0 && std::abs(beta - std::round(beta)) < 1e-12;
  double total = 0.0;
  for (unsigned box = 0; box < (1u << d); ++box) {
    // Axis i covers [lo_i, lo_i + 1]; density factor 1 - |u_i - delta_i|.
    std::vector<int> lo(static_cast<std::size_t>(d));
    bool vertex = true;
    for (int i = 0; i < d; ++i) {
      lo[i] = ((box >> i) & 1u) ? delta[i] : delta[i] - 1;
      vertex = vertex && (lo[i] == 0 || lo[i] == -1);
    }
    auto density = [&](int i, double u) { return 1.0 - std::abs(u - delta[i]); };
    if (!vertex) {
      std::vector<double> u(static_cast<std::size_t>(d));
      total += tensor_quadrature(coarse, d, [&](const std::vector<double>& p) {
        double r2 = 0.0, w = 1.0;
        for (int i = 0; i < d; ++i) {
          u[i] = lo[i] + p[i];
          r2 += u[i] * u[i];
          w *= density(i, u[i]);
        }
        return w * std::pow(r2, 0.5 * alpha);
      });
      continue;
    }
    // v_i = |u_i| in [0,1]; u_i = sign_i v_i.
    std::vector<double> sign(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) sign[i] = lo[i] == 0 ? 1.0 : -1.0;
    for (int j = 0; j < d; ++j) {
      const double inner = tensor_quadrature(fine, d, [&](const std::vector<double>& p) {
        // p[0] -> t, p[1..] -> s over the other axes.
        double t, wt;
        if (integer_beta) {
          t = p[0];
          wt = std::pow(t, beta);
        } else {
          t = std::pow(p[0], 1.0 / (beta + 1.0));
          wt = 1.0 / (beta + 1.0);
        }
        double s2 = 1.0, w = density(j, sign[j] * t);
        int c = 1;
        for (int i = 0; i < d; ++i) {
          if (i == j) continue;
          const double si = p[c++];
          s2 += si * si;
          w *= density(i, sign[i] * t * si);
        }
        return wt * w * std::pow(s2, 0.5 * alpha);
      });
      total += inner;
    }
  }
  return total;
}

// Cell-pair averages of (eta/q_k)|x - y|^alpha for cubes of side s at
// integer displacement delta: exact for max|delta_i| <= near, midpoint beyond.
class KernelEntries {
public:
  KernelEntries(double alpha, int d, double s, double amp, int near)
      : alpha_(alpha), d_(d), s_(s), amp_(amp), near_(near) {
    const std::size_t count = ipow(static_cast<std::size_t>(near + 1), d);
    table_.resize(count);
    std::map<std::vector<int>, double> by_class;
    std::vector<int> a(static_cast<std::size_t>(d), 0);
    for (std::size_t c = 0; c < count; ++c) {
      auto key = a;
      std::sort(key.begin(), key.end());
      auto it = by_class.find(key);
      if (it == by_class.end()) {
        const bool self = key.back() == 0;
        const double avg = self ? self_cell_average(alpha, d) : pair_average(alpha, key);
        it = by_class.emplace(key, amp * std::pow(s, alpha) * avg).first;
      }
      table_[c] = it->second;
      for (int i = d - 1; i >= 0; --i) {
        if (++a[i] <= near) break;
        a[i] = 0;
      }
    }
  }

  double operator()(const int* delta) const {
    std::size_t c = 0;
    long r2 = 0;
    bool close = true;
    for (int i = 0; i < d_; ++i) {
      const int m = std::abs(delta[i]);
      close = close && m <= near_;
      c = c * static_cast<std::size_t>(near_ + 1) + static_cast<std::size_t>(std::min(m, near_));
      r2 += long(m) * m;
    }
    if (close) return table_[c];
    return amp_ * std::pow(s_ * s_ * double(r2), 0.5 * alpha_);
  }

private:
  double alpha_;
  int d_;
  double s_, amp_;
  int near_;
  std::vector<double> table_;
};

} // namespace

double cell_pair_average(double alpha, std::span<const int> delta) {
  std::vector<int> key(delta.begin(), delta.end());
  for (int& v : key) v = std::abs(v);
  std::sort(key.begin(), key.end());
  const int d = static_cast<int>(key.size());
  if (d < 1 || !(alpha > -d)) throw Error(kModule, "cell_pair_average needs alpha > -d");
  return pair_average(alpha, key);
}

KernelOperator kernel_matrix(int k, int d, double eta, double q_k, int resolution, double half_width,
                             int near_field) {
  if (d < 2 * k + 1) throw Error(kModule, "kernel needs d >= 2k+1");
  if (d > 16 || near_field < 0) throw Error(kModule, "kernel needs d <= 16 and near_field >= 0");
  if (!(eta > 0.0) || !(q_k > 0.0)) throw Error(kModule, "eta and q_k must be positive");
  if (resolution < 1) throw Error(kModule, "resolution must be >= 1");
  KernelOperator K;
  K.k = k;
  K.d = d;
  K.resolution = resolution;
  K.half_width = half_width;
  K.eta = eta;
  K.q_k = q_k;
  K.near_field = near_field;
  const double alpha = 2.0 * k - d;
  const double s = 2.0 * half_width / resolution;
  const double amp = eta / q_k;
  const KernelEntries entry(alpha, d, s, amp, near_field);

  const std::size_t n = K.cells();
  std::vector<std::vector<int>> coords(n);
  for (std::size_t i = 0; i < n; ++i) {
    coords[i].resize(static_cast<std::size_t>(d));
    std::size_t t = i;
    for (int a = d - 1; a >= 0; --a) {
      coords[i][a] = static_cast<int>(t % resolution);
      t /= resolution;
    }
  }
  K.matrix.assign(n * n, 0.0);
  const bool par = parallel_enabled();
#pragma omp parallel for schedule(static) if (par)
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      int delta[16];
      for (int a = 0; a < d; ++a) delta[a] = coords[i][a] - coords[j][a];
      K.matrix[i * n + j] = entry(delta);
    }
  }
  Eigen::Map<const Eigen::MatrixXd> A(K.matrix.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success) throw Error(kModule, "kernel matrix is not positive definite");
  return K;
}

DualValues dual_values(const KernelOperator& K, std::span<const double> f) {
  const auto Kf = K.apply(f);
  const double vol = K.cell_volume();
  double f1 = 0.0, fKf = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    f1 += f[i];
    fKf += f[i] * Kf[i];
  }
  f1 *= vol;
  fKf *= vol;
  if (fKf == 0.0) throw Error(kModule, "rayleigh quotient of the zero function");
  return {2.0 * f1 - fKf, f1 * f1 / fKf};
}

std::vector<double> dual_optimizer(const KernelOperator& K) {
  const auto n = static_cast<Eigen::Index>(K.cells());
  Eigen::Map<const Eigen::MatrixXd> A(K.matrix.data(), n, n);
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success) throw Error(kModule, "kernel matrix is not positive definite");
  const Eigen::VectorXd f = llt.solve(Eigen::VectorXd::Constant(n, 1.0 / K.cell_volume()));
  return {f.data(), f.data() + n};
}

EigenCapacity eigen_capacity(const KernelOperator& K, std::size_t memory_limit) {
  const std::size_t n = K.cells();
  const double need = 32.0 * double(n) * double(n);
  if (need > double(memory_limit))
    throw Error(kModule, "eigendecomposition of " + std::to_string(n) + " cells needs " +
                             std::to_string(static_cast<long long>(need / (1 << 20))) +
                             " MiB; lower the resolution");
  std::vector<double> a = K.matrix;
  std::vector<double> mu(n);
  EigenCapacity out;
  out.backend = "lapack-dsyevd";
  out.residual = std::numeric_limits<double>::infinity();
  if (lapack_eigensolver_ok()) {
    const lapack_int info = LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'U', static_cast<lapack_int>(n), a.data(),
                                           static_cast<lapack_int>(n), mu.data());
    if (info == 0) out.residual = eigenpair_residual(K.matrix, a, mu);
  }
  if (!(out.residual < kEigenResidualLimit)) {
    // Some optimised BLAS builds return wrong eigenvectors on some CPUs
    // (seen with OpenBLAS's Cooperlake kernels); recompute with Eigen.
    const auto N = static_cast<Eigen::Index>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::Map<const Eigen::MatrixXd>(K.matrix.data(), N, N));
    if (es.info() != Eigen::Success) throw Error(kModule, "eigendecomposition failed");
    std::copy_n(es.eigenvalues().data(), n, mu.data());
    std::copy_n(es.eigenvectors().data(), n * n, a.data());
    out.backend = "eigen";
    out.residual = eigenpair_residual(K.matrix, a, mu);
  }
  const double vol = K.cell_volume();
  out.eigenvalues.resize(n);
  out.weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t r = 0; r < n; ++r) s += a[i * n + r];  // column-major: column i is eigenvector i
    out.eigenvalues[i] = vol * mu[i];
    out.weights[i] = vol * s * s;
    if (!(mu[i] > 0.0)) throw Error(kModule, "non-positive kernel eigenvalue");
    out.value += out.weights[i] / out.eigenvalues[i];
  }
  return out;
}

namespace {

using Poly = std::vector<double>;  // coefficients in ascending powers

Poly derivative2(const Poly& p) {
  Poly r(p.size() > 2 ? p.size() - 2 : 1, 0.0);
  for (std::size_t i = 2; i < p.size(); ++i) r[i - 2] = double(i) * double(i - 1) * p[i];
  return r;
}

double horner(const Poly& p, double x) {
  double v = 0.0;
  for (auto it = p.rbegin(); it != p.rend(); ++it) v = v * x + *it;
  return v;
}

struct TensorTerm {
  double coeff;
  std::vector<Poly> factors;
};

} // namespace

InverseIdentityReport verify_inverse_identity(const QPolynomial& q, int d, int resolution, double eta,
                                              double bump_width, double scale, int near_field) {
  const int k = q.k();
  const double q_k = q.coeff(k);
  if (d < 2 * k + 1) throw Error(kModule, "identity needs d >= 2k+1");
  if (d < 2) throw Error(kModule, "identity test function needs d >= 2");
  if (!(bump_width > 0.0 && bump_width <= 1.0)) throw Error(kModule, "bump_width must lie in (0, 1]");
  const KernelOperator shape{k, d, resolution, 1.0, eta, q_k, near_field, {}};
  const double alpha = 2.0 * k - d;
  const double s = 2.0 / resolution;
  const double vol = shape.cell_volume();

  // p(t) = (1 - (t/b)^2)^m on |t| < b, m = 2k+1.
  const int m = 2 * k + 1;
  Poly base{1.0};
  for (int i = 0; i < m; ++i) {
    Poly next(base.size() + 2, 0.0);
    for (std::size_t j = 0; j < base.size(); ++j) {
      next[j] += base[j];
      next[j + 2] -= base[j] / (bump_width * bump_width);
    }
    base = next;
  }
  std::vector<TensorTerm> terms{{scale, std::vector<Poly>(static_cast<std::size_t>(d), base)}};
  for (int j = 0; j < k; ++j) {
    std::vector<TensorTerm> next;
    for (const auto& t : terms)
      for (int a = 0; a < d; ++a) {
        TensorTerm nt = t;
        nt.coeff = -t.coeff;
        nt.factors[a] = derivative2(t.factors[a]);
        next.push_back(std::move(nt));
      }
    terms = std::move(next);
  }

  const std::size_t n = shape.cells();
  // Cell averages, exact for the piecewise polynomials involved; they keep
  // the zero total mass of (-Delta)^k f that point sampling would lose.
  auto cell_mean = [&](const Poly& p, double lo, double hi) {
    const double a = std::max(lo, -bump_width), b = std::min(hi, bump_width);
    if (!(b > a)) return 0.0;
    Poly P(p.size() + 1, 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) P[i + 1] = p[i] / double(i + 1);
    return (horner(P, b) - horner(P, a)) / (hi - lo);
  };
  std::vector<double> f(n), lap(n), h(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = shape.cell_center(i);
    h[i] = 1.0 + 0.5 * c[0] + c[1] * c[1] + s * s / 12.0;
    double fv = scale;
    for (double v : c) fv *= cell_mean(base, v - 0.5 * s, v + 0.5 * s);
    f[i] = fv;
    double lv = 0.0;
    for (const auto& t : terms) {
      double pv = t.coeff;
      for (int a = 0; a < d; ++a) pv *= cell_mean(t.factors[a], c[a] - 0.5 * s, c[a] + 0.5 * s);
      lv += pv;
    }
    lap[i] = lv;
  }

  // K lap by circular convolution on a (2n)^d grid.
  const int side = 2 * resolution;
  std::vector<int> dims(static_cast<std::size_t>(d), side);
  const std::size_t big = ipow(static_cast<std::size_t>(side), d);
  const std::size_t half = big / side * (side / 2 + 1);
  auto kern = fft::alloc_real(big);
  auto field = fft::alloc_real(big);
  auto kh = fft::alloc_complex(half);
  auto fh = fft::alloc_complex(half);
  const KernelEntries entry(alpha, d, s, eta / q_k, near_field);
  std::vector<int> idx(static_cast<std::size_t>(d), 0), delta(static_cast<std::size_t>(d));
  for (std::size_t t = 0; t < big; ++t) {
    for (int a = 0; a < d; ++a) delta[a] = idx[a] <= resolution ? idx[a] : idx[a] - side;
    kern[t] = entry(delta.data());
    field[t] = 0.0;
    for (int a = d - 1; a >= 0; --a) {
      if (++idx[a] < side) break;
      idx[a] = 0;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t src = i, dst = 0, mul = 1;
    for (int a = d - 1; a >= 0; --a) {
      dst += (src % resolution) * mul;
      src /= resolution;
      mul *= side;
    }
    field[dst] = lap[i];
  }
  const auto fwd = fft::plan_r2c(d, dims);
  const auto bwd = fft::plan_c2r(d, dims);
  fftw_execute_dft_r2c(fwd.get(), kern.get(), kh.get());
  fftw_execute_dft_r2c(fwd.get(), field.get(), fh.get());
  for (std::size_t t = 0; t < half; ++t) {
    const double re = kh[t][0] * fh[t][0] - kh[t][1] * fh[t][1];
    const double im = kh[t][0] * fh[t][1] + kh[t][1] * fh[t][0];
    fh[t][0] = re;
    fh[t][1] = im;
  }
  fftw_execute_dft_c2r(bwd.get(), fh.get(), field.get());

  InverseIdentityReport rep;
  rep.k = k;
  rep.d = d;
  rep.resolution = resolution;
  rep.eta = eta;
  rep.q_k = q_k;
  double raw = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t src = i, dst = 0, mul = 1;
    for (int a = d - 1; a >= 0; --a) {
      dst += (src % resolution) * mul;
      src /= resolution;
      mul *= side;
    }
    const double Klap = vol * field[dst] / double(big);
    raw += h[i] * Klap;
    rhs += h[i] * f[i];
  }
  rep.raw = raw * vol;
  rep.rhs = rhs * vol;
  const double p = std::pow(2.0 * d, k);
  const std::vector<std::pair<std::string, double>> consts = {
      {"q_k/(2d)^(2k)", q_k / (p * p)}, {"q_k/(2d)^k", q_k / p}, {"q_k", q_k}, {"1", 1.0}};
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [name, cst] : consts) {
    NormalizationCandidate c{name, cst, cst * rep.raw, 0.0};
    c.residual = rep.rhs == 0.0 ? std::abs(c.lhs) : std::abs(c.lhs - rep.rhs) / std::abs(rep.rhs);
    if (c.residual < best) {
      best = c.residual;
      rep.best = rep.candidates.size();
    }
    rep.candidates.push_back(c);
  }
  return rep;
}

double model_decay_constant(const QPolynomial& q, int d) {
  if (q.k() == 1 && d == 3) return decay_constant(q, d, 15, 30, QuadratureSpec{64, 4, 1.5, 1e-6}, 2).eta;
  return decay_constant(q, d, 8, 16, QuadratureSpec{64, 3, 1.25, 1e-6}).eta;
}

void write_capacity_json(std::ostream& os, const CapacityResult& r) {
  nlohmann::json j;
  j["kind"] = "capacity";
  j["schema_version"] = 1;
  j["k"] = r.problem.k;
  j["d"] = r.problem.d;
  j["h_step"] = r.problem.h_step;
  j["R"] = r.problem.R;
  j["half_width"] = r.problem.half_width;
  j["primal"] = r.primal;
  j["primal_raw"] = r.primal_raw;
  j["kernel_resolution"] = r.kernel_resolution;
  j["eta"] = r.eta;
  j["q_k"] = r.q_k;
  j["dual_linear"] = r.dual_linear;
  j["dual_rayleigh"] = r.dual_rayleigh;
  j["eigen_sum"] = r.eigen_sum;
  j["dual_capacity"] = r.dual_capacity;
  j["gap"] = r.gap;
  os << j.dump() << '\n';
}

void write_extrapolation_json(std::ostream& os, int k, int d, const CapacityExtrapolation& e) {
  nlohmann::json j;
  j["kind"] = "capacity_extrapolation";
  j["schema_version"] = 1;
  j["k"] = k;
  j["d"] = d;
  j["refused"] = e.refused;
  if (e.refused) j["reason"] = e.reason;
  auto& raw = j["raw"] = nlohmann::json::array();
  for (const auto& s : e.raw) raw.push_back({{"h_step", s.h_step}, {"R", s.R}, {"value", s.value}});
  if (!e.refused) {
    j["fixed_R"] = e.fixed_R;
    j["order"] = e.order;
    j["h_limit"] = e.h_limit;
    j["h_correction"] = e.h_correction;
    j["h_error"] = e.h_error;
    j["R_fit"] = e.fit == RadiusFit::additive ? "additive" : "reciprocal";
    j["R_limit_additive"] = e.R_limit_additive;
    j["R_limit_reciprocal"] = e.R_limit_reciprocal;
    j["R_correction"] = e.R_correction;
    j["R_error"] = e.R_error;
    j["value"] = e.value;
    j["error"] = e.error;
  }
  os << j.dump() << '\n';
}

void write_minimizer_csv(std::ostream& os, const ObstacleSolution& s) {
  const auto& p = s.problem;
  os << "# k=" << p.k << " d=" << p.d << " h=" << p.h_step << " R=" << p.R << " value=" << s.value << '\n';
  os << "x1,x2,u\n";
  std::vector<int> m(static_cast<std::size_t>(p.d), 0);
  for (int a = -s.M; a <= s.M; ++a)
    for (int b = -s.M; b <= s.M; ++b) {
      m[0] = a;
      if (p.d > 1) m[1] = b;
      os << a * p.h_step << ',' << b * p.h_step << ',' << s.at(m) << '\n';
      if (p.d == 1) break;
    }
}

void write_spectrum_csv(std::ostream& os, const EigenCapacity& e) {
  os << "# eigen_sum=" << e.value << '\n';
  os << "index,eigenvalue,weight\n";
  for (std::size_t i = 0; i < e.eigenvalues.size(); ++i)
    os << i << ',' << e.eigenvalues[i] << ',' << e.weights[i] << '\n';
}

double radius_limit(int k, int d, const std::vector<CapacitySample>& samples, RadiusFit fit) {
  if (samples.size() < 2) throw Error(kModule, "radius limit needs at least 2 radii");
  std::vector<double> xs, ys;
  for (const auto& s : samples) {
    xs.push_back(std::pow(s.R, 2.0 * k - d));
    ys.push_back(fit == RadiusFit::additive ? s.value : 1.0 / s.value);
  }
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (std::abs(xs[i] - xs[0]) < 1e-14) throw Error(kModule, "radius limit needs distinct radii");
  const double a = line_intercept(xs, ys).first;
  return fit == RadiusFit::additive ? a : 1.0 / a;
}

void CapacityStudySpec::validate() const {
  if (inverse_steps.empty() || radii.empty() || kernel_resolutions.empty())
    throw Error(kModule, "capacity study needs steps, radii and kernel resolutions");
  for (int n : inverse_steps)
    if (n < 1) throw Error(kModule, "inverse steps must be positive");
  for (int n : kernel_resolutions) {
    if (n < 1) throw Error(kModule, "kernel resolution must be positive");
    if (std::find_if(inverse_steps.begin(), inverse_steps.end(), [&](int m) {
          return std::abs(2.0 * half_width / n - 1.0 / m) < 1e-12;
        }) == inverse_steps.end())
      throw Error(kModule, "kernel resolution " + std::to_string(n) + " has no primal step h = 2a/n");
  }
  for (int m : inverse_steps)
    for (double R : radii) ObstacleProblem{q.k(), d, 1.0 / m, R, half_width}.validate();
}

CapacityStudy capacity_study(const CapacityStudySpec& spec) {
  spec.validate();
  CapacityStudy st;
  st.spec = spec;
  const int k = spec.q.k();
  const double q_k = spec.q.coeff(k);
  st.eta = spec.eta > 0.0 ? spec.eta : model_decay_constant(spec.q, spec.d);

  auto steps = spec.inverse_steps;
  std::sort(steps.begin(), steps.end());
  steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
  auto radii = spec.radii;
  std::sort(radii.begin(), radii.end());
  radii.erase(std::unique(radii.begin(), radii.end()), radii.end());

  // Coarse to fine at each radius so every solve after the first is warm.
  std::vector<std::vector<ObstacleSolution>> grid(steps.size(), std::vector<ObstacleSolution>(radii.size()));
  for (std::size_t r = 0; r < radii.size(); ++r)
    for (std::size_t i = 0; i < steps.size(); ++i) {
      const ObstacleProblem p{k, spec.d, 1.0 / steps[i], radii[r], spec.half_width};
      grid[i][r] = solve_obstacle(p, spec.options, i ? &grid[i - 1][r] : nullptr);
      st.converged = st.converged && grid[i][r].converged;
    }
  for (auto& row : grid)
    for (auto& s : row) st.solutions.push_back(std::move(s));
  auto sol = [&](std::size_t i, std::size_t r) -> const ObstacleSolution& {
    return st.solutions[i * radii.size() + r];
  };

  std::vector<CapacitySample> hseq, rseq;
  for (std::size_t i = 0; i < steps.size(); ++i)
    hseq.push_back({1.0 / steps[i], radii.back(), sol(i, radii.size() - 1).value});
  for (std::size_t r = 0; r < radii.size(); ++r)
    rseq.push_back({1.0 / steps.back(), radii[r], sol(steps.size() - 1, r).value});
  st.extrapolation = extrapolate_capacity(k, spec.d, hseq, rseq, spec.fit);

  for (int n : spec.kernel_resolutions) {
    const double h = 2.0 * spec.half_width / n;
    std::size_t i = 0;
    while (std::abs(1.0 / steps[i] - h) > 1e-12) ++i;
    CapacityResult res;
    res.problem = sol(i, radii.size() - 1).problem;
    res.primal_raw = sol(i, radii.size() - 1).value;
    if (radii.size() >= 2) {
      std::vector<CapacitySample> col;
      for (std::size_t r = 0; r < radii.size(); ++r) col.push_back({h, radii[r], sol(i, r).value});
      res.primal = radius_limit(k, spec.d, col, spec.fit);
    } else {
      res.primal = res.primal_raw;
    }
    const auto K = kernel_matrix(k, spec.d, st.eta, q_k, n, spec.half_width, spec.near_field);
    auto eig = eigen_capacity(K);
    const auto f = dual_optimizer(K);
    const auto dv = dual_values(K, f);
    res.kernel_resolution = n;
    res.eta = st.eta;
    res.q_k = q_k;
    res.dual_linear = dv.linear;
    res.dual_rayleigh = dv.rayleigh;
    res.eigen_sum = eig.value;
    res.dual_capacity = eig.value / q_k;
    res.gap = std::abs(res.primal - res.dual_capacity) / res.primal;
    st.results.push_back(res);
    st.spectra.push_back(std::move(eig));
  }
  return st;
}

void write_capacity_csv(std::ostream& os, const CapacityStudy& s, const std::string& header) {
  detail::write_comment_lines(os, header);
  os.precision(12);
  const auto& e = s.extrapolation;
  os << "# k=" << s.spec.q.k() << " d=" << s.spec.d << " a=" << s.spec.half_width << " eta=" << s.eta << '\n';
  if (e.refused)
    os << "# extrapolation refused: " << e.reason << '\n';
  else
    os << "# extrapolated=" << e.value << " error=" << e.error << " order=" << e.order
       << " R_fit=" << (e.fit == RadiusFit::additive ? "additive" : "reciprocal") << '\n';
  os << "h,R_max,primal_raw,primal,kernel_resolution,q_k,eigen_sum,dual_linear,dual_rayleigh,dual_capacity,gap,"
        "backend\n";
  for (std::size_t i = 0; i < s.results.size(); ++i) {
    const auto& r = s.results[i];
    os << r.problem.h_step << ',' << r.problem.R << ',' << r.primal_raw << ',' << r.primal << ','
       << r.kernel_resolution << ',' << r.q_k << ',' << r.eigen_sum << ',' << r.dual_linear << ','
       << r.dual_rayleigh << ',' << r.dual_capacity << ',' << r.gap << ',' << s.spectra[i].backend << '\n';
  }
}

void write_capacity_samples_csv(std::ostream& os, const CapacityStudy& s, const std::string& header) {
  detail::write_comment_lines(os, header);
  os.precision(12);
  os << "h,R,value,iterations,converged,feasibility,stationarity,complementarity,dual_sign,contact_deviation,"
        "symmetry_defect\n";
  for (const auto& x : s.solutions)
    os << x.problem.h_step << ',' << x.problem.R << ',' << x.value << ',' << x.iterations << ','
       << (x.converged ? 1 : 0) << ',' << x.kkt.feasibility << ',' << x.kkt.stationarity << ','
       << x.kkt.complementarity << ',' << x.kkt.dual_sign << ',' << x.kkt.contact_deviation << ','
       << x.symmetry_defect << '\n';
}

} // namespace entrep
