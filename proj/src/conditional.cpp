#include "entrep/conditional.hpp"

#include "entrep/error.hpp"
#include "entrep/rng.hpp"
#include "entrep/spectral.hpp"
#include "fft.hpp"

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <boost/math/special_functions/erf.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <unordered_map>

namespace entrep {

namespace {

std::size_t ipow_size(int base, int e) {
  std::size_t r = 1;
  for (int i = 0; i < e; ++i) r *= static_cast<std::size_t>(base);
  return r;
}

int sup_norm(std::span<const int> x) {
  int m = 0;
  for (int v : x) m = std::max(m, std::abs(v));
  return m;
}

int l1_norm(std::span<const int> x) {
  int m = 0;
  for (int v : x) m += std::abs(v);
  return m;
}

// All offsets in [-r, r]^d, lexicographic.
template <class F>
void for_each_offset(int d, int r, F&& f) {
  std::vector<int> x(static_cast<std::size_t>(d), -r);
  while (true) {
    f(x);
    int a = d - 1;
    while (a >= 0 && x[static_cast<std::size_t>(a)] == r) x[static_cast<std::size_t>(a--)] = -r;
    if (a < 0) return;
    ++x[static_cast<std::size_t>(a)];
  }
}

// Offsets of B u dB indexed in a cube of side 2 R + 1.
struct LocalCube {
  int d;
  int R;
  int side;

  LocalCube(int d_, int R_) : d(d_), R(R_), side(2 * R_ + 1) {}
  std::size_t size() const {
    std::size_t n = 1;
    for (int i = 0; i < d; ++i) n *= static_cast<std::size_t>(side);
    return n;
  }
  // -1 when outside the cube
  std::int64_t index(std::span<const int> x) const {
    std::int64_t s = 0;
    for (int v : x) {
      if (v < -R || v > R) return -1;
      s = s * side + (v + R);
    }
    return s;
  }
};

} // namespace

JStencil JStencil::build(const QPolynomial& q, int d, double eps) {
  JStencil st;
  st.d = d;
  st.K = q.K();
  const TorusGrid g{d, 2 * st.K + 1, eps};
  const std::vector<int> origin(static_cast<std::size_t>(d), 0);
  const auto row = j_apply(q, eps, LatticeField::spike(g, origin));
  st.diagonal = row.at(origin);
  const double floor = 1e-15 * std::abs(st.diagonal);
  for (std::size_t i = 0; i < g.sites(); ++i) {
    auto x = reduce_displacement(g.coords(i), g.L);
    if (l1_norm(x) == 0 || l1_norm(x) > st.K || std::abs(row[i]) <= floor) continue;
    st.offsets.push_back(std::move(x));
    st.weights.push_back(row[i]);
  }
  return st;
}

std::size_t BoxGeometry::center_index() const {
  const std::vector<int> zero(center.size(), 0);
  const auto it = std::find(interior.begin(), interior.end(), zero);
  if (it == interior.end()) throw Error("conditional", "box interior does not contain its center");
  return static_cast<std::size_t>(it - interior.begin());
}

BoxGeometry make_shell_geometry(std::vector<int> center, int inner_radius, int outer_radius, int K) {
  if (center.empty()) throw Error("conditional", "box center needs at least one coordinate");
  if (inner_radius < 0 || outer_radius <= inner_radius) throw Error("conditional", "need 0 <= inner radius < outer radius");
  BoxGeometry g;
  g.center = std::move(center);
  g.K = K;
  g.inner_radius = inner_radius;
  g.outer_radius = outer_radius;
  for_each_offset(g.d(), outer_radius, [&](const std::vector<int>& x) {
    (sup_norm(x) <= inner_radius ? g.interior : g.boundary).push_back(x);
  });
  return g;
}

BoxGeometry make_box(std::vector<int> center, int L_box, int K) {
  if (K < 1) throw Error("conditional", "operator range K must be >= 1");
  if (L_box <= K + 1) throw Error("conditional", "box side must satisfy L > K+1");
  if ((L_box - K) % 2 != 0) throw Error("conditional", "box side must satisfy L - K even");
  auto g = make_shell_geometry(std::move(center), (L_box - K) / 2 - 1, (L_box + K) / 2, K);
  g.L_box = L_box;
  return g;
}

std::vector<std::size_t> torus_sites(const TorusGrid& grid, const BoxGeometry& geometry,
                                     const std::vector<std::vector<int>>& offsets) {
  std::vector<std::size_t> out;
  out.reserve(offsets.size());
  std::vector<int> y(geometry.center.size());
  for (const auto& o : offsets) {
    for (std::size_t a = 0; a < y.size(); ++a) y[a] = geometry.center[a] + o[a];
    out.push_back(grid.index(y));
  }
  return out;
}

namespace {

using SparseRow = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct InteriorSystem {
  SparseRow J;
  Eigen::VectorXd rhs;
};

InteriorSystem assemble_interior(const JStencil& st, const BoxGeometry& geo, std::span<const double> boundary_values) {
  const LocalCube cube(geo.d(), geo.outer_radius);
  std::vector<std::int64_t> interior_at(cube.size(), -1), boundary_at(cube.size(), -1);
  for (std::size_t i = 0; i < geo.interior.size(); ++i)
    interior_at[static_cast<std::size_t>(cube.index(geo.interior[i]))] = static_cast<std::int64_t>(i);
  for (std::size_t i = 0; i < geo.boundary.size(); ++i)
    boundary_at[static_cast<std::size_t>(cube.index(geo.boundary[i]))] = static_cast<std::int64_t>(i);

  const auto n = static_cast<Eigen::Index>(geo.interior.size());
  InteriorSystem sys;
  sys.rhs = Eigen::VectorXd::Zero(n);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(n) * (st.offsets.size() + 1));
  std::vector<int> y(static_cast<std::size_t>(geo.d()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& x = geo.interior[static_cast<std::size_t>(i)];
    trip.emplace_back(i, i, st.diagonal);
    for (std::size_t j = 0; j < st.offsets.size(); ++j) {
      for (std::size_t a = 0; a < y.size(); ++a) y[a] = x[a] + st.offsets[j][a];
      const auto c = cube.index(y);
      if (c < 0) continue;  // beyond the cube: pinned to zero
      if (const auto k = interior_at[static_cast<std::size_t>(c)]; k >= 0) {
        trip.emplace_back(i, static_cast<Eigen::Index>(k), st.weights[j]);
      } else if (const auto b = boundary_at[static_cast<std::size_t>(c)]; b >= 0 && !boundary_values.empty()) {
        sys.rhs(i) -= st.weights[j] * boundary_values[static_cast<std::size_t>(b)];
      }
    }
  }
  sys.J.resize(n, n);
  sys.J.setFromTriplets(trip.begin(), trip.end());
  return sys;
}

} // namespace

ConditionalLaw conditional_law(const QPolynomial& q, const TorusGrid& grid, const BoxGeometry& geometry,
                               std::span<const double> boundary_values, double tol) {
  if (boundary_values.size() != geometry.boundary.size())
    throw Error("conditional", "boundary values must match the boundary site count");
  if (grid.L < 2 * geometry.outer_radius + 1)
    throw Error("conditional", "torus too small: the box and its boundary would wrap");
  const auto st = JStencil::build(q, geometry.d(), grid.eps);
  const auto sys = assemble_interior(st, geometry, boundary_values);

  Eigen::ConjugateGradient<SparseRow, Eigen::Lower | Eigen::Upper, Eigen::DiagonalPreconditioner<double>> cg;
  cg.setTolerance(tol);
  cg.setMaxIterations(static_cast<Eigen::Index>(std::max<std::size_t>(1000, 20 * geometry.interior.size())));
  cg.compute(sys.J);
  if (cg.info() != Eigen::Success) throw Error("conditional", "interior precision block is singular");

  ConditionalLaw law;
  law.geometry = geometry;
  const Eigen::VectorXd m = cg.solve(sys.rhs);
  if (cg.info() != Eigen::Success) throw Error("conditional", "CG did not converge on the interior block");
  law.mean.assign(m.data(), m.data() + m.size());
  law.cg_iterations = static_cast<int>(cg.iterations());
  law.cg_residual = cg.error();

  Eigen::VectorXd e = Eigen::VectorXd::Zero(sys.rhs.size());
  const auto c = static_cast<Eigen::Index>(geometry.center_index());
  e(c) = 1.0;
  const Eigen::VectorXd u = cg.solve(e);
  if (cg.info() != Eigen::Success) throw Error("conditional", "CG did not converge on the interior block");
  law.center_variance = u(c);
  law.cg_iterations = std::max(law.cg_iterations, static_cast<int>(cg.iterations()));
  if (!(law.center_variance > 0.0)) throw Error("conditional", "interior precision block is singular");
  return law;
}

ConditionalLaw conditional_law(const QPolynomial& q, const BoxGeometry& geometry, const LatticeField& field,
                               double tol) {
  const auto& grid = field.grid();
  const auto sites = torus_sites(grid, geometry, geometry.boundary);
  std::vector<double> values(sites.size());
  for (std::size_t i = 0; i < sites.size(); ++i) values[i] = field[sites[i]];
  return conditional_law(q, grid, geometry, values, tol);
}

GLCurve g_l_curve(const QPolynomial& q, int d, const std::vector<int>& L_boxes, double eps, double reference) {
  GLCurve curve;
  curve.reference = reference;
  for (int L : L_boxes) {
    const auto geo = make_box(std::vector<int>(static_cast<std::size_t>(d), 0), L, q.K());
    const TorusGrid grid{d, 2 * geo.outer_radius + 1, eps};
    const auto law = conditional_law(q, grid, geo, std::vector<double>(geo.boundary.size(), 0.0));
    if (!curve.rows.empty() && law.center_variance < curve.rows.back().g_l) curve.increasing = false;
    curve.rows.push_back({L, law.center_variance, law.cg_iterations});
    if (reference > 0.0) {
      curve.gaps.push_back(std::abs(law.center_variance - reference));
      if (curve.gaps.size() >= 2 && curve.gaps.back() >= curve.gaps[curve.gaps.size() - 2]) curve.gaps_decreasing = false;
    }
  }
  return curve;
}

SingleSiteLaw single_site_law(const QPolynomial& q, const LatticeField& field, std::span<const int> x) {
  const auto& grid = field.grid();
  require_range_fits(grid, q);
  const auto st = JStencil::build(q, grid.d, grid.eps);
  std::vector<int> y(x.begin(), x.end());
  double s = 0.0;
  for (std::size_t j = 0; j < st.offsets.size(); ++j) {
    for (std::size_t a = 0; a < y.size(); ++a) y[a] = x[a] + st.offsets[j][a];
    s += st.weights[j] * field.at(y);
  }
  return {-s / st.diagonal, 1.0 / st.diagonal};
}

std::vector<double> gauss_seidel_interior(const QPolynomial& q, const BoxGeometry& geometry, const LatticeField& field,
                                          double tol, int max_sweeps, int* sweeps_used) {
  const auto& grid = field.grid();
  if (grid.L < 2 * geometry.outer_radius + 1)
    throw Error("conditional", "torus too small: the box and its boundary would wrap");
  const auto st = JStencil::build(q, grid.d, grid.eps);
  const LocalCube cube(grid.d, geometry.outer_radius);
  std::vector<double> local(cube.size(), 0.0);
  const auto bsites = torus_sites(grid, geometry, geometry.boundary);
  for (std::size_t i = 0; i < bsites.size(); ++i)
    local[static_cast<std::size_t>(cube.index(geometry.boundary[i]))] = field[bsites[i]];
  const auto isites = torus_sites(grid, geometry, geometry.interior);
  std::vector<std::size_t> at(geometry.interior.size());
  std::vector<std::vector<std::int64_t>> nb(geometry.interior.size());
  std::vector<int> y(static_cast<std::size_t>(grid.d));
  for (std::size_t i = 0; i < geometry.interior.size(); ++i) {
    at[i] = static_cast<std::size_t>(cube.index(geometry.interior[i]));
    local[at[i]] = field[isites[i]];
    for (const auto& o : st.offsets) {
      for (std::size_t a = 0; a < y.size(); ++a) y[a] = geometry.interior[i][a] + o[a];
      nb[i].push_back(cube.index(y));
    }
  }
  int sweep = 0;
  for (; sweep < max_sweeps; ++sweep) {
    double change = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < at.size(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < nb[i].size(); ++j)
        if (nb[i][j] >= 0) s += st.weights[j] * local[static_cast<std::size_t>(nb[i][j])];
      const double v = -s / st.diagonal;
      change = std::max(change, std::abs(v - local[at[i]]));
      scale = std::max(scale, std::abs(v));
      local[at[i]] = v;
    }
    if (change <= tol * std::max(scale, 1.0)) {
      ++sweep;
      break;
    }
  }
  if (sweeps_used) *sweeps_used = sweep;
  std::vector<double> out(at.size());
  for (std::size_t i = 0; i < at.size(); ++i) out[i] = local[at[i]];
  return out;
}

PositivityRegion PositivityRegion::make(const TorusGrid& grid, int N, int K) {
  if (N < 0) throw Error("conditional", "positivity region needs N >= 0");
  if (grid.L < 2 * N + 1 + 2 * (K + 1))
    throw Error("conditional", "torus too small: V_N needs a margin of K+1 sites on every side");
  PositivityRegion r;
  r.grid = grid;
  r.N = N;
  r.center.assign(static_cast<std::size_t>(grid.d), grid.L / 2);
  r.mask.assign(grid.sites(), 0);
  for (std::size_t s = 0; s < grid.sites(); ++s) {
    const auto x = grid.coords(s);
    bool in = true;
    for (std::size_t a = 0; a < x.size(); ++a) in = in && std::abs(x[a] - r.center[a]) <= N;
    if (in) {
      r.mask[s] = 1;
      r.sites.push_back(s);
    }
  }
  return r;
}

double PositivityRegion::min_over(std::span<const double> field) const {
  double m = std::numeric_limits<double>::infinity();
  for (auto s : sites) m = std::min(m, field[s]);
  return m;
}

double log_normal_tail(double z) {
  if (z < 30.0) return std::log(0.5 * std::erfc(z / std::numbers::sqrt2));
  const double z2 = 1.0 / (z * z);
  const double series = 1.0 + z2 * (-1.0 + z2 * (3.0 + z2 * (-15.0 + z2 * 105.0)));
  return -0.5 * z * z - std::log(z) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(series);
}

double truncated_normal_tail(double alpha, double v) {
  if (!(v > 0.0 && v < 1.0)) throw Error("conditional", "uniform draw must lie in (0,1)");
  if (alpha < 8.0) {
    const double p = v * 0.5 * std::erfc(alpha / std::numbers::sqrt2);
    const double z = std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
    return std::max(z, alpha);
  }
  // Q(z) = v Q(alpha) with Q(z) ~ Q(alpha) e^{-alpha (z - alpha)} as a start.
  const double target = std::log(v) + log_normal_tail(alpha);
  const double log_sqrt_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  double z = alpha - std::log(v) / alpha;
  for (int it = 0; it < 60; ++it) {
    const double lq = log_normal_tail(z);
    // d/dz log Q(z) = -phi(z)/Q(z)
    const double slope = -std::exp(-0.5 * z * z - log_sqrt_2pi - lq);
    const double step = (lq - target) / slope;
    z = std::max(alpha, z - step);
    if (std::abs(step) <= 1e-15 * z) break;
  }
  return z;
}

GibbsChain::GibbsChain(const QPolynomial& q, LatticeField initial, std::uint64_t seed)
    : q_(q), stencil_(JStencil::build(q, initial.grid().d, initial.grid().eps)), state_(std::move(initial)),
      seed_(seed) {
  const auto& g = state_.grid();
  require_range_fits(g, q_);
  const std::size_t n = g.sites(), m = stencil_.offsets.size();
  neighbors_.resize(n * m);
  std::vector<int> y(static_cast<std::size_t>(g.d));
  for (std::size_t s = 0; s < n; ++s) {
    const auto x = g.coords(s);
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t a = 0; a < y.size(); ++a) y[a] = x[a] + stencil_.offsets[j][a];
      neighbors_[s * m + j] = static_cast<std::int32_t>(g.index(y));
    }
  }
}

double GibbsChain::site_mean(std::size_t site) const {
  const std::size_t m = stencil_.offsets.size();
  const auto v = state_.values();
  double s = 0.0;
  for (std::size_t j = 0; j < m; ++j) s += stencil_.weights[j] * v[static_cast<std::size_t>(neighbors_[site * m + j])];
  return -s / stencil_.diagonal;
}

const std::vector<std::vector<std::size_t>>& GibbsChain::color_classes() const {
  if (!colors_.empty()) return colors_;
  const auto& g = state_.grid();
  const int K = stencil_.K;
  if (K == 1) {
    if (g.L % 2 != 0) throw Error("conditional", "checkerboard sweeps need an even torus side");
    colors_.resize(2);
    for (std::size_t s = 0; s < g.sites(); ++s) {
      int p = 0;
      for (int v : g.coords(s)) p += v;
      colors_[static_cast<std::size_t>(p % 2)].push_back(s);
    }
  } else {
    if (g.L % (K + 1) != 0) throw Error("conditional", "colored sweeps need the torus side divisible by K+1");
    colors_.resize(ipow_size(K + 1, g.d));
    for (std::size_t s = 0; s < g.sites(); ++s) {
      std::size_t c = 0;
      for (int v : g.coords(s)) c = c * static_cast<std::size_t>(K + 1) + static_cast<std::size_t>(v % (K + 1));
      colors_[c].push_back(s);
    }
  }
  return colors_;
}

template <class Update>
void GibbsChain::run_sweep(SweepOrder order, const PositivityRegion* region, UpdateSet update, Update&& update_site) {
  const RandomStream rng(seed_, "gibbs", sweeps_);
  auto visit = [&](std::size_t s) {
    const bool in_region = region && region->contains(s);
    if (update == UpdateSet::region_only && !in_region) return;
    update_site(s, in_region, rng);
  };
  if (order == SweepOrder::lexicographic) {
    for (std::size_t s = 0; s < state_.size(); ++s) visit(s);
  } else {
    for (const auto& cls : color_classes()) {
      const auto n = static_cast<std::int64_t>(cls.size());
#pragma omp parallel for schedule(static)
      for (std::int64_t i = 0; i < n; ++i) visit(cls[static_cast<std::size_t>(i)]);
    }
  }
  ++sweeps_;
}

void GibbsChain::sweep(SweepOrder order) {
  const double sigma = 1.0 / std::sqrt(stencil_.diagonal);
  run_sweep(order, nullptr, UpdateSet::all, [&](std::size_t s, bool, const RandomStream& rng) {
    state_[s] = site_mean(s) + sigma * rng.normal_pair_at(s)[0];
  });
}

void GibbsChain::truncated_sweep(const PositivityRegion& region, SweepOrder order, UpdateSet update) {
  if (!(region.grid == state_.grid())) throw Error("conditional", "positivity region lives on a different torus");
  if (region.min_over(state_.values()) < 0.0)
    throw Error("conditional", "chain state violates positivity on the region");
  const double sigma = 1.0 / std::sqrt(stencil_.diagonal);
  run_sweep(order, &region, update, [&](std::size_t s, bool in_region, const RandomStream& rng) {
    const double mu = site_mean(s);
    if (in_region) {
      const double z = truncated_normal_tail(-mu / sigma, rng.uniform_pair_at(s)[0]);
      state_[s] = std::max(0.0, mu + sigma * z);
    } else {
      state_[s] = mu + sigma * rng.normal_pair_at(s)[0];
    }
  });
}

GibbsChain::Checkpoint GibbsChain::checkpoint() const {
  return {seed_, sweeps_, state_.grid(), q_.dense(), std::vector<double>(state_.values().begin(), state_.values().end())};
}

GibbsChain GibbsChain::resume(const Checkpoint& cp) {
  GibbsChain chain(QPolynomial::from_coefficients(cp.q_dense), LatticeField(cp.grid, cp.field), cp.seed);
  chain.sweeps_ = cp.sweeps;
  return chain;
}

LatticeField gibbs_sweep(const QPolynomial& q, const LatticeField& field, std::uint64_t seed) {
  GibbsChain chain(q, field, seed);
  chain.sweep();
  return chain.state();
}

LatticeField truncated_gibbs_sweep(const QPolynomial& q, const LatticeField& field, const PositivityRegion& region,
                                   std::uint64_t seed) {
  GibbsChain chain(q, field, seed);
  chain.truncated_sweep(region);
  return chain.state();
}

void save_checkpoint(std::ostream& os, const GibbsChain::Checkpoint& cp) {
  nlohmann::json j;
  j["kind"] = "gibbs_checkpoint";
  j["schema_version"] = 1;
  j["seed"] = cp.seed;
  j["sweeps"] = cp.sweeps;
  j["d"] = cp.grid.d;
  j["L"] = cp.grid.L;
  j["eps"] = cp.grid.eps;
  j["q"] = cp.q_dense;
  j["field"] = cp.field;
  os << j.dump() << '\n';
}

GibbsChain::Checkpoint load_checkpoint(std::istream& is) {
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("conditional", std::string("unreadable checkpoint: ") + e.what());
  }
  if (j.value("kind", "") != "gibbs_checkpoint") throw Error("conditional", "not a Gibbs checkpoint");
  if (j.value("schema_version", 0) != 1) throw Error("conditional", "unsupported checkpoint schema version");
  GibbsChain::Checkpoint cp;
  cp.seed = j.at("seed").get<std::uint64_t>();
  cp.sweeps = j.at("sweeps").get<std::uint64_t>();
  cp.grid = TorusGrid{j.at("d").get<int>(), j.at("L").get<int>(), j.at("eps").get<double>()};
  cp.q_dense = j.at("q").get<std::vector<double>>();
  cp.field = j.at("field").get<std::vector<double>>();
  if (cp.field.size() != cp.grid.sites()) throw Error("conditional", "checkpoint field size does not match its grid");
  return cp;
}

namespace {

// Covariance restricted to a site subset, applied through the symbol:
// Sigma_SS x = restrict(F^{-1}[ F[embed x] / symbol ]).
class CirculantRestriction {
public:
  CirculantRestriction(const QPolynomial& q, const TorusGrid& grid, const std::vector<std::size_t>& sites)
      : grid_(grid), sites_(sites) {
    const int L = grid.L, d = grid.d;
    dims_.assign(static_cast<std::size_t>(d), L);
    n_ = grid.sites();
    n_half_ = n_ / static_cast<std::size_t>(L) * static_cast<std::size_t>(L / 2 + 1);
    const auto sym = SymbolGrid::build(q, grid);
    inv_symbol_.resize(n_half_);
    std::vector<int> m(static_cast<std::size_t>(d), 0);
    for (std::size_t i = 0; i < n_half_; ++i) {
      inv_symbol_[i] = 1.0 / (sym.at(m) * static_cast<double>(n_));
      for (int a = d - 1; a >= 0; --a) {
        const int lim = a == d - 1 ? L / 2 + 1 : L;
        if (++m[static_cast<std::size_t>(a)] < lim) break;
        m[static_cast<std::size_t>(a)] = 0;
      }
    }
    fwd_ = fft::plan_r2c(d, dims_);
    bwd_ = fft::plan_c2r(d, dims_);
    real_ = fft::alloc_real(n_);
    spec_ = fft::alloc_complex(n_half_);
  }

  void apply(const Eigen::VectorXd& x, Eigen::VectorXd& y) {
    std::fill(real_.get(), real_.get() + n_, 0.0);
    for (std::size_t i = 0; i < sites_.size(); ++i) real_[sites_[i]] = x(static_cast<Eigen::Index>(i));
    fftw_execute_dft_r2c(fwd_.get(), real_.get(), spec_.get());
    for (std::size_t i = 0; i < n_half_; ++i) {
      spec_[i][0] *= inv_symbol_[i];
      spec_[i][1] *= inv_symbol_[i];
    }
    fftw_execute_dft_c2r(bwd_.get(), spec_.get(), real_.get());
    y.resize(static_cast<Eigen::Index>(sites_.size()));
    for (std::size_t i = 0; i < sites_.size(); ++i) y(static_cast<Eigen::Index>(i)) = real_[sites_[i]];
  }

private:
  TorusGrid grid_;
  std::vector<std::size_t> sites_;
  std::vector<int> dims_;
  std::size_t n_ = 0, n_half_ = 0;
  std::vector<double> inv_symbol_;
  fft::Plan fwd_, bwd_;
  fft::Buffer<double> real_;
  fft::Buffer<fftw_complex> spec_;
};

// Plain CG for a symmetric positive-definite operator.
template <class Apply>
Eigen::VectorXd conjugate_gradient(Apply&& apply, const Eigen::VectorXd& b, double tol, int max_iter) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(b.size());
  Eigen::VectorXd r = b, p = r, Ap;
  double rr = r.squaredNorm();
  const double stop = tol * tol * b.squaredNorm();
  for (int it = 0; it < max_iter && rr > stop; ++it) {
    apply(p, Ap);
    const double alpha = rr / p.dot(Ap);
    x += alpha * p;
    r -= alpha * Ap;
    const double rr_new = r.squaredNorm();
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  if (rr > stop) throw Error("conditional", "covariance CG did not converge");
  return x;
}

} // namespace

std::vector<std::vector<double>> covariance_conditional_coefficients(const QPolynomial& q, const TorusGrid& grid,
                                                                     const std::vector<std::size_t>& targets,
                                                                     const std::vector<std::size_t>& conditioning,
                                                                     std::size_t dense_limit) {
  const auto table = green_torus(q, grid);
  std::vector<std::vector<int>> coords(grid.sites());
  for (std::size_t s = 0; s < grid.sites(); ++s) coords[s] = grid.coords(s);
  std::vector<int> diff(static_cast<std::size_t>(grid.d));
  auto cov = [&](std::size_t a, std::size_t b) {
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = coords[a][i] - coords[b][i];
    return table.at(diff);
  };
  const auto ns = static_cast<Eigen::Index>(conditioning.size());
  Eigen::MatrixXd rhs(ns, static_cast<Eigen::Index>(targets.size()));
  for (Eigen::Index i = 0; i < ns; ++i)
    for (std::size_t t = 0; t < targets.size(); ++t)
      rhs(i, static_cast<Eigen::Index>(t)) = cov(conditioning[static_cast<std::size_t>(i)], targets[t]);

  Eigen::MatrixXd w(ns, rhs.cols());
  if (conditioning.size() <= dense_limit) {
    Eigen::MatrixXd S(ns, ns);
    for (Eigen::Index i = 0; i < ns; ++i)
      for (Eigen::Index j = 0; j <= i; ++j)
        S(i, j) = S(j, i) = cov(conditioning[static_cast<std::size_t>(i)], conditioning[static_cast<std::size_t>(j)]);
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success) throw Error("conditional", "covariance block is not positive definite");
    w = llt.solve(rhs);
  } else {
    CirculantRestriction op(q, grid, conditioning);
    for (Eigen::Index t = 0; t < rhs.cols(); ++t)
      w.col(t) = conjugate_gradient([&](const Eigen::VectorXd& x, Eigen::VectorXd& y) { op.apply(x, y); },
                                    rhs.col(t), 1e-14, 20000);
  }
  std::vector<std::vector<double>> out(targets.size());
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const auto c = w.col(static_cast<Eigen::Index>(t));
    out[t].assign(c.data(), c.data() + c.size());
  }
  return out;
}

std::vector<double> covariance_conditional_mean(const QPolynomial& q, const TorusGrid& grid,
                                                const std::vector<std::size_t>& targets,
                                                const std::vector<std::size_t>& conditioning,
                                                std::span<const double> values) {
  if (values.size() != conditioning.size()) throw Error("conditional", "one value per conditioning site is required");
  CirculantRestriction sub(q, grid, conditioning);
  Eigen::VectorXd b(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) b(static_cast<Eigen::Index>(i)) = values[i];
  const Eigen::VectorXd z =
      conjugate_gradient([&](const Eigen::VectorXd& x, Eigen::VectorXd& y) { sub.apply(x, y); }, b, 1e-14, 20000);
  // Sigma_{T,S} z: spread z over S, apply the full covariance, read off T.
  std::vector<std::size_t> all(grid.sites());
  for (std::size_t s = 0; s < all.size(); ++s) all[s] = s;
  CirculantRestriction full(q, grid, all);
  Eigen::VectorXd spread = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(all.size())), out;
  for (std::size_t i = 0; i < conditioning.size(); ++i) spread(static_cast<Eigen::Index>(conditioning[i])) = z(static_cast<Eigen::Index>(i));
  full.apply(spread, out);
  std::vector<double> mean(targets.size());
  for (std::size_t t = 0; t < targets.size(); ++t) mean[t] = out(static_cast<Eigen::Index>(targets[t]));
  return mean;
}

MarkovReport markov_check(const QPolynomial& q, const TorusGrid& grid, const BoxGeometry& geometry,
                          std::size_t dense_limit) {
  if (!(grid.eps > 0.0)) throw Error("conditional", "markov_check needs eps > 0 for a finite torus covariance");
  if (grid.L < 2 * geometry.outer_radius + 1)
    throw Error("conditional", "torus too small: the box and its boundary would wrap");
  const auto inner = torus_sites(grid, geometry, geometry.interior);
  const auto shell = torus_sites(grid, geometry, geometry.boundary);
  std::vector<int> role(grid.sites(), 0);  // 0 exterior, 1 interior, 2 boundary
  for (auto s : inner) role[s] = 1;
  for (auto s : shell) role[s] = 2;
  std::vector<std::size_t> complement;
  for (std::size_t s = 0; s < grid.sites(); ++s)
    if (role[s] != 1) complement.push_back(s);

  MarkovReport rep;
  rep.conditioning_sites = complement.size();
  rep.dense = complement.size() <= dense_limit;
  const auto full = covariance_conditional_coefficients(q, grid, inner, complement, dense_limit);
  const auto local = covariance_conditional_coefficients(q, grid, inner, shell, dense_limit);
  std::unordered_map<std::size_t, std::size_t> shell_pos;
  for (std::size_t i = 0; i < shell.size(); ++i) shell_pos[shell[i]] = i;
  for (std::size_t b = 0; b < inner.size(); ++b) {
    for (std::size_t i = 0; i < complement.size(); ++i) {
      const auto s = complement[i];
      if (role[s] == 2)
        rep.boundary_mismatch = std::max(rep.boundary_mismatch, std::abs(full[b][i] - local[b][shell_pos.at(s)]));
      else
        rep.exterior_weight = std::max(rep.exterior_weight, std::abs(full[b][i]));
    }
  }
  rep.residual = std::max(rep.boundary_mismatch, rep.exterior_weight);
  return rep;
}

} // namespace entrep
