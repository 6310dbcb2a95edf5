#include "entrep/experiments.hpp"

#include "entrep/conditional.hpp"
#include "entrep/error.hpp"
#include "entrep/rng.hpp"
#include "entrep/spectral.hpp"

#include "csv_header.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <ostream>
#include <tuple>

#ifndef ENTREP_VERSION
#define ENTREP_VERSION "unknown"
#endif

namespace entrep {

namespace {

constexpr const char* kModule = "experiments";

std::uint64_t derived_seed(std::uint64_t master, std::string_view purpose, std::uint64_t index) {
  RandomStream s(master, purpose, index);
  return s();
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

// Standard error of the mean from `batches` contiguous batch means.
double batch_means_se(const std::vector<double>& v, std::size_t batches = 20) {
  if (v.size() < 2 * batches) batches = std::max<std::size_t>(2, v.size() / 2);
  if (v.size() < 2) return 0.0;
  const std::size_t per = v.size() / batches;
  std::vector<double> means;
  for (std::size_t b = 0; b < batches; ++b) {
    double s = 0.0;
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) s += v[i];
    means.push_back(s / double(per));
  }
  const double m = mean_of(means);
  double var = 0.0;
  for (double x : means) var += (x - m) * (x - m);
  var /= double(means.size() - 1);
  return std::sqrt(var / double(means.size()));
}

OrthantEstimate make_estimate(int N, std::uint64_t hits, std::uint64_t samples) {
  OrthantEstimate e;
  e.N = N;
  e.samples = samples;
  e.hits = hits;
  if (hits == 0) {
    e.one_sided = true;
    e.ci = wilson_interval(0, samples, 1.6448536269514722);
    e.ci.lo = 0.0;
    e.rare_event = true;
    return e;
  }
  const double p = double(hits) / double(samples);
  e.p_hat = p;
  e.std_error = std::sqrt(p * (1.0 - p) / double(samples));
  e.ci = wilson_interval(hits, samples);
  e.rare_event = p < 10.0 / double(samples);
  return e;
}

int colored_side(int L, int K) {
  const int m = K == 1 ? 2 : K + 1;
  return (L + m - 1) / m * m;
}

} // namespace

WilsonInterval wilson_interval(std::uint64_t hits, std::uint64_t trials, double z) {
  if (trials == 0) throw Error(kModule, "wilson interval needs trials > 0");
  const double n = double(trials);
  const double p = double(hits) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

void RepulsionConfig::validate() const {
  if (N < 0) throw Error(kModule, "N must be >= 0");
  if (samples < 100) throw Error(kModule, "at least 100 samples are needed for an estimate");
  PositivityRegion::make(grid, N, q.K());
}

OrthantEstimate estimate_orthant(const RepulsionConfig& cfg) {
  cfg.validate();
  const SpectralSampler sampler(cfg.q, cfg.grid);
  const auto region = PositivityRegion::make(cfg.grid, cfg.N, cfg.q.K());
  const auto M = static_cast<std::int64_t>(cfg.samples);
  std::uint64_t hits = 0;
#pragma omp parallel reduction(+ : hits)
  {
    std::vector<double> buf(cfg.grid.sites());
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < M; ++i) {
      sampler.draw_into(cfg.seed, static_cast<std::uint64_t>(i), buf);
      if (region.min_over(buf) >= 0.0) ++hits;
    }
  }
  return make_estimate(cfg.N, hits, cfg.samples);
}

NestedOrthant estimate_orthant_nested(const QPolynomial& q, const TorusGrid& grid, const std::vector<int>& Ns,
                                      std::uint64_t samples, std::uint64_t seed) {
  if (Ns.empty()) throw Error(kModule, "no N given");
  if (samples < 100) throw Error(kModule, "at least 100 samples are needed for an estimate");
  std::vector<PositivityRegion> regions;
  for (int N : Ns) regions.push_back(PositivityRegion::make(grid, N, q.K()));
  const SpectralSampler sampler(q, grid);
  const std::size_t R = Ns.size();
  std::vector<std::uint64_t> hits(R, 0);
  std::uint64_t violations = 0;
  const auto M = static_cast<std::int64_t>(samples);
#pragma omp parallel
  {
    std::vector<double> buf(grid.sites());
    std::vector<std::uint64_t> local(R, 0);
    std::uint64_t local_violations = 0;
    std::vector<char> hit(R);
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < M; ++i) {
      sampler.draw_into(seed, static_cast<std::uint64_t>(i), buf);
      for (std::size_t r = 0; r < R; ++r) {
        hit[r] = regions[r].min_over(buf) >= 0.0;
        local[r] += hit[r];
      }
      for (std::size_t a = 0; a < R; ++a)
        for (std::size_t b = 0; b < R; ++b)
          if (Ns[a] < Ns[b] && hit[b] && !hit[a]) ++local_violations;
    }
#pragma omp critical
    {
      for (std::size_t r = 0; r < R; ++r) hits[r] += local[r];
      violations += local_violations;
    }
  }
  NestedOrthant out;
  for (std::size_t r = 0; r < R; ++r) out.estimates.push_back(make_estimate(Ns[r], hits[r], samples));
  out.inclusion_violations = violations;
  return out;
}

double bivariate_orthant(double rho) { return 0.25 + std::asin(rho) / (2.0 * std::numbers::pi); }

TwoSiteCheck two_site_orthant(const QPolynomial& q, const TorusGrid& grid, std::uint64_t samples, std::uint64_t seed) {
  if (samples < 100) throw Error(kModule, "at least 100 samples are needed for an estimate");
  const auto table = green_torus(q, grid);
  std::vector<int> e1(static_cast<std::size_t>(grid.d), 0);
  e1[0] = 1;
  TwoSiteCheck out;
  out.rho = table.at(e1) / table.origin();
  out.exact = bivariate_orthant(out.rho);
  const SpectralSampler sampler(q, grid);
  std::vector<int> c(static_cast<std::size_t>(grid.d), grid.L / 2);
  const std::size_t a = grid.index(c);
  c[0] += 1;
  const std::size_t b = grid.index(c);
  const auto M = static_cast<std::int64_t>(samples);
  std::uint64_t hits = 0;
#pragma omp parallel reduction(+ : hits)
  {
    std::vector<double> buf(grid.sites());
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < M; ++i) {
      sampler.draw_into(seed, static_cast<std::uint64_t>(i), buf);
      if (buf[a] >= 0.0 && buf[b] >= 0.0) ++hits;
    }
  }
  out.estimate = make_estimate(1, hits, samples);
  const double p = out.estimate.p_hat.value_or(0.0);
  const double se = std::sqrt(out.exact * (1.0 - out.exact) / double(samples));
  out.z_score = (p - out.exact) / se;
  return out;
}

TorusGrid repulsion_torus(const QPolynomial& q, int d, int N, double mass_constant, int extra_margin) {
  if (!(mass_constant > 0.0)) throw Error(kModule, "mass constant must be positive");
  const int K = q.K();
  const int L = colored_side(2 * N + 1 + 2 * (K + 1) + std::max(0, extra_margin), K);
  return TorusGrid{d, L, mass_constant / (double(L) * L)};
}

RateTable rate_table(const QPolynomial& q, int d, const RateRunSpec& spec, double green_origin, double capacity) {
  RateTable t;
  t.k = q.k();
  t.d = d;
  t.q_k = q.coeff(q.k());
  t.green_origin = green_origin;
  t.capacity = capacity;
  t.asymptote = 2.0 * t.k * t.q_k * green_origin * capacity;
  for (int N : spec.Ns) {
    RateRow row;
    row.N = N;
    RepulsionConfig cfg;
    cfg.q = q;
    cfg.grid = repulsion_torus(q, d, N, spec.mass_constant, spec.extra_margin);
    cfg.N = N;
    cfg.samples = spec.samples;
    cfg.seed = derived_seed(spec.seed, "rate", static_cast<std::uint64_t>(N));
    row.L = cfg.grid.L;
    row.eps = cfg.grid.eps;
    row.estimate = estimate_orthant(cfg);
    row.normalizer = N > 1 ? std::pow(double(N), d - 2 * t.k) * std::log(double(N)) : 0.0;
    if (row.normalizer > 0.0) {
      if (row.estimate.p_hat) row.rate = -std::log(*row.estimate.p_hat) / row.normalizer;
      if (row.estimate.ci.hi > 0.0) row.rate_lo = -std::log(row.estimate.ci.hi) / row.normalizer;
      if (row.estimate.ci.lo > 0.0) row.rate_hi = -std::log(row.estimate.ci.lo) / row.normalizer;
    }
    t.rows.push_back(row);
  }
  return t;
}

void HeightConfig::validate() const {
  if (Ns.empty()) throw Error(kModule, "height run needs at least one N");
  if (!(block_scale > 0.0 && block_scale <= 1.0)) throw Error(kModule, "block scale must lie in (0, 1]");
  if (!z.empty() && static_cast<int>(z.size()) != d) throw Error(kModule, "block centre has the wrong dimension");
  if (burn_in < 0 || thinning < 1 || kept < 2 || chains < 2 || chains % 2 != 0)
    throw Error(kModule, "height run needs burn_in >= 0, thinning >= 1, kept >= 2 and an even chains >= 2");
  for (int N : Ns) {
    if (N < 1) throw Error(kModule, "N must be >= 1");
    const int half = static_cast<int>(std::floor(block_scale * N));
    for (int zi : z)
      if (std::abs(zi) + half > N) throw Error(kModule, "block V_{N,eps}(z) leaves V_N");
  }
  if (mx_box < 0 || mx_every < 1) throw Error(kModule, "mx_box must be >= 0 and mx_every >= 1");
}

HeightResult height_run(const HeightConfig& cfg, double green_origin) {
  cfg.validate();
  HeightResult res;
  res.config = cfg;
  res.green_origin = green_origin;
  const int k = cfg.q.k();
  const int K = cfg.q.K();
  const double target = std::sqrt(4.0 * k * green_origin);
  for (int N : cfg.Ns) {
    HeightRow row;
    row.N = N;
    const TorusGrid grid = repulsion_torus(cfg.q, cfg.d, N, cfg.mass_constant, cfg.extra_margin);
    row.L = grid.L;
    row.eps = grid.eps;
    row.target = target;
    row.a_N = target * std::sqrt(std::log(double(N)));
    const auto region = PositivityRegion::make(grid, N, K);
    const int half = static_cast<int>(std::floor(cfg.block_scale * N));
    std::vector<int> bc = region.center;
    for (int a = 0; a < cfg.d; ++a) bc[a] += cfg.z.empty() ? 0 : cfg.z[a];
    std::vector<std::size_t> block;
    for (std::size_t s : region.sites) {
      const auto x = grid.coords(s);
      bool in = true;
      for (int a = 0; a < cfg.d; ++a) in = in && std::abs(x[a] - bc[a]) <= half;
      if (in) block.push_back(s);
    }
    row.block_sites = block.size();

    // Box centres for the m_x diagnostic: a lattice of spacing mx_box,
    // shifted by mx_shift, restricted to the block.
    std::vector<std::vector<int>> box_centers;
    if (cfg.mx_box > 0) {
      for (std::size_t s : block) {
        const auto x = grid.coords(s);
        bool on = true;
        for (int a = 0; a < cfg.d; ++a) {
          const int r = ((x[a] - bc[a] - cfg.mx_shift) % cfg.mx_box + cfg.mx_box) % cfg.mx_box;
          on = on && r == 0;
        }
        if (on) box_centers.push_back(x);
      }
    }
    std::vector<double> mx_values;

    const double high = cfg.high_start > 0.0 ? cfg.high_start : 2.0 * row.a_N;
    std::vector<double> low_means, high_means, low_ses, high_ses;
    for (int c = 0; c < cfg.chains; ++c) {
      ChainSummary cs;
      cs.start = c < cfg.chains / 2 ? 0.0 : high;
      const std::uint64_t seed =
          derived_seed(cfg.seed, cfg.conditioned ? "height" : "height-control", std::uint64_t(N) * 1000 + c);
      GibbsChain chain(cfg.q, LatticeField::constant(grid, cs.start), seed);
      auto step = [&] {
        if (cfg.conditioned)
          chain.truncated_sweep(region, SweepOrder::colored);
        else
          chain.sweep(SweepOrder::colored);
      };
      for (int t = 0; t < cfg.burn_in; ++t) step();
      std::vector<double> trace;
      cs.min_over_region = std::numeric_limits<double>::infinity();
      for (int t = 0; t < cfg.kept; ++t) {
        for (int r = 0; r < cfg.thinning; ++r) step();
        const auto v = chain.state().values();
        double s = 0.0;
        for (std::size_t b : block) s += v[b];
        trace.push_back(s / double(block.size()));
        cs.min_over_region = std::min(cs.min_over_region, region.min_over(v));
        if (!box_centers.empty() && t % cfg.mx_every == 0) {
          double acc = 0.0;
          for (const auto& x : box_centers) {
            const auto geom = make_box(x, cfg.mx_box, K);
            const auto law = conditional_law(cfg.q, geom, chain.state());
            acc += law.mean[geom.center_index()];
          }
          mx_values.push_back(acc / double(box_centers.size()));
        }
      }
      cs.mean = mean_of(trace);
      cs.std_error = batch_means_se(trace);
      (c < cfg.chains / 2 ? low_means : high_means).push_back(cs.mean);
      (c < cfg.chains / 2 ? low_ses : high_ses).push_back(cs.std_error);
      row.chains.push_back(cs);
    }
    auto group = [](const std::vector<double>& means, const std::vector<double>& ses) {
      const double m = mean_of(means);
      double pooled = 0.0;
      for (double s : ses) pooled += s * s;
      pooled = std::sqrt(pooled) / double(ses.size());
      double spread = 0.0;
      if (means.size() > 1) {
        for (double x : means) spread += (x - m) * (x - m);
        spread = std::sqrt(spread / double(means.size() - 1) / double(means.size()));
      }
      return std::make_pair(m, std::max(pooled, spread));
    };
    std::tie(row.low_start_mean, row.low_start_se) = group(low_means, low_ses);
    std::tie(row.high_start_mean, row.high_start_se) = group(high_means, high_ses);
    row.starts_overlap = std::abs(row.low_start_mean - row.high_start_mean) <=
                         4.0 * std::hypot(row.low_start_se, row.high_start_se);
    std::vector<double> all_means = low_means, all_ses = low_ses;
    all_means.insert(all_means.end(), high_means.begin(), high_means.end());
    all_ses.insert(all_ses.end(), high_ses.begin(), high_ses.end());
    std::tie(row.mean, row.std_error) = group(all_means, all_ses);
    row.ratio = row.mean / std::sqrt(std::log(double(N)));
    if (!mx_values.empty()) {
      row.mx_block_mean = mean_of(mx_values);
      double var = 0.0;
      for (double x : mx_values) var += (x - *row.mx_block_mean) * (x - *row.mx_block_mean);
      row.mx_block_se = mx_values.size() > 1 ? std::sqrt(var / double(mx_values.size() - 1) / double(mx_values.size()))
                                             : 0.0;
    }
    res.converged = res.converged && row.starts_overlap;
    res.rows.push_back(std::move(row));
  }
  return res;
}

std::vector<AssumptionCRow> check_assumption_c(const QPolynomial& q, int d, int L, const std::vector<double>& eps) {
  const double sites = std::pow(double(L), d);
  if (sites > 1e5) throw Error(kModule, "check_assumption_c is limited to 1e5 torus sites");
  std::vector<AssumptionCRow> rows;
  for (double e : eps) {
    if (!(e > 0.0)) throw Error(kModule, "assumption (c) needs eps > 0");
    const TorusGrid grid{d, L, e};
    const auto table = green_torus(q, grid);
    const auto v = table.values();
    const auto mn = std::min_element(v.begin(), v.end());
    const auto mx = std::max_element(v.begin(), v.end());
    AssumptionCRow r;
    r.eps = e;
    r.min_entry = *mn;
    r.max_entry = *mx;
    const auto x = grid.coords(static_cast<std::size_t>(mn - v.begin()));
    r.argmin = reduce_displacement(x, L);
    r.consistent = r.min_entry >= -1e-12 * r.max_entry;
    rows.push_back(r);
  }
  return rows;
}

std::string code_version() { return ENTREP_VERSION; }

namespace {

nlohmann::json record_json(const RunRecord& r) {
  return {{"schema_version", r.schema_version}, {"id", r.id},         {"kind", r.kind},
          {"seed", r.seed},                     {"config", r.config}, {"results", r.results},
          {"diagnostics", r.diagnostics},       {"wall_seconds", r.wall_seconds},
          {"code_version", r.code_version}};
}

} // namespace

void persist_run(const std::string& path, const RunRecord& record) {
  if (record.id.empty()) throw Error(kModule, "run record needs an id");
  std::ofstream os(path, std::ios::app);
  if (!os) throw Error(kModule, "cannot open run store " + path);
  os << record_json(record).dump() << '\n';
  if (!os) throw Error(kModule, "failed writing run store " + path);
}

std::vector<RunRecord> load_runs(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(kModule, "cannot open run store " + path);
  std::vector<RunRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(kModule, path + ":" + std::to_string(lineno) + ": corrupt run record: " + e.what());
    }
    try {
      const int version = j.at("schema_version").get<int>();
      if (version != RunRecord::kSchemaVersion)
        throw Error(kModule, path + ":" + std::to_string(lineno) + ": schema_version " + std::to_string(version) +
                                 " needs migration to " + std::to_string(RunRecord::kSchemaVersion));
      RunRecord r;
      r.schema_version = version;
      r.id = j.at("id").get<std::string>();
      r.kind = j.at("kind").get<std::string>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.config = j.at("config");
      r.results = j.at("results");
      r.diagnostics = j.at("diagnostics");
      r.wall_seconds = j.at("wall_seconds").get<double>();
      r.code_version = j.at("code_version").get<std::string>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error(kModule, path + ":" + std::to_string(lineno) + ": corrupt run record: " + e.what());
    }
  }
  return out;
}

RunRecord load_run(const std::string& path, const std::string& id) {
  for (auto& r : load_runs(path))
    if (r.id == id) return r;
  throw Error(kModule, "no run with id " + id + " in " + path);
}

nlohmann::json to_json(const RepulsionConfig& c) {
  return {{"q", c.q.dense()}, {"d", c.grid.d},          {"L", c.grid.L},   {"eps", c.grid.eps},
          {"N", c.N},         {"samples", c.samples}, {"seed", c.seed}};
}

RepulsionConfig repulsion_config_from_json(const nlohmann::json& j) {
  try {
    RepulsionConfig c;
    c.q = QPolynomial::from_coefficients(j.at("q").get<std::vector<double>>());
    c.grid = TorusGrid{j.at("d").get<int>(), j.at("L").get<int>(), j.at("eps").get<double>()};
    c.N = j.at("N").get<int>();
    c.samples = j.at("samples").get<std::uint64_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(kModule, std::string("bad repulsion config: ") + e.what());
  }
}

nlohmann::json to_json(const HeightConfig& c) {
  return {{"q", c.q.dense()},
          {"d", c.d},
          {"Ns", c.Ns},
          {"block_scale", c.block_scale},
          {"z", c.z},
          {"mass_constant", c.mass_constant},
          {"extra_margin", c.extra_margin},
          {"burn_in", c.burn_in},
          {"thinning", c.thinning},
          {"kept", c.kept},
          {"chains", c.chains},
          {"high_start", c.high_start},
          {"conditioned", c.conditioned},
          {"seed", c.seed},
          {"mx_box", c.mx_box},
          {"mx_shift", c.mx_shift},
          {"mx_every", c.mx_every}};
}

HeightConfig height_config_from_json(const nlohmann::json& j) {
  try {
    HeightConfig c;
    c.q = QPolynomial::from_coefficients(j.at("q").get<std::vector<double>>());
    c.d = j.at("d").get<int>();
    c.Ns = j.at("Ns").get<std::vector<int>>();
    c.block_scale = j.at("block_scale").get<double>();
    c.z = j.at("z").get<std::vector<int>>();
    c.mass_constant = j.at("mass_constant").get<double>();
    c.extra_margin = j.at("extra_margin").get<int>();
    c.burn_in = j.at("burn_in").get<int>();
    c.thinning = j.at("thinning").get<int>();
    c.kept = j.at("kept").get<int>();
    c.chains = j.at("chains").get<int>();
    c.high_start = j.at("high_start").get<double>();
    c.conditioned = j.at("conditioned").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.mx_box = j.at("mx_box").get<int>();
    c.mx_shift = j.at("mx_shift").get<int>();
    c.mx_every = j.at("mx_every").get<int>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(kModule, std::string("bad height config: ") + e.what());
  }
}

nlohmann::json to_json(const OrthantEstimate& e) {
  nlohmann::json j{{"N", e.N},           {"samples", e.samples},     {"hits", e.hits},
                   {"std_error", e.std_error}, {"ci_lo", e.ci.lo}, {"ci_hi", e.ci.hi},
                   {"one_sided", e.one_sided}, {"rare_event", e.rare_event}};
  j["p_hat"] = e.p_hat ? nlohmann::json(*e.p_hat) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const HeightResult& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json chains = nlohmann::json::array();
    for (const auto& c : row.chains)
      chains.push_back(
          {{"start", c.start}, {"mean", c.mean}, {"std_error", c.std_error}, {"min_over_region", c.min_over_region}});
    nlohmann::json jr{{"N", row.N},
                      {"L", row.L},
                      {"eps", row.eps},
                      {"block_sites", row.block_sites},
                      {"mean", row.mean},
                      {"std_error", row.std_error},
                      {"ratio", row.ratio},
                      {"target", row.target},
                      {"a_N", row.a_N},
                      {"low_start_mean", row.low_start_mean},
                      {"low_start_se", row.low_start_se},
                      {"high_start_mean", row.high_start_mean},
                      {"high_start_se", row.high_start_se},
                      {"starts_overlap", row.starts_overlap},
                      {"chains", chains}};
    if (row.mx_block_mean) {
      jr["mx_block_mean"] = *row.mx_block_mean;
      jr["mx_block_se"] = *row.mx_block_se;
    }
    rows.push_back(jr);
  }
  return {{"config", to_json(r.config)}, {"green_origin", r.green_origin}, {"converged", r.converged}, {"rows", rows}};
}

nlohmann::json to_json(const RateTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows) {
    nlohmann::json jr{{"N", r.N}, {"L", r.L}, {"eps", r.eps}, {"estimate", to_json(r.estimate)},
                      {"normalizer", r.normalizer}};
    jr["rate"] = r.rate ? nlohmann::json(*r.rate) : nlohmann::json(nullptr);
    jr["rate_lo"] = r.rate_lo ? nlohmann::json(*r.rate_lo) : nlohmann::json(nullptr);
    jr["rate_hi"] = r.rate_hi ? nlohmann::json(*r.rate_hi) : nlohmann::json(nullptr);
    rows.push_back(jr);
  }
  return {{"k", t.k},
          {"d", t.d},
          {"q_k", t.q_k},
          {"green_origin", t.green_origin},
          {"capacity", t.capacity},
          {"asymptote", t.asymptote},
          {"rows", rows}};
}

namespace {

using detail::write_comment_lines;

template <class T>
void opt_cell(std::ostream& os, const std::optional<T>& v) {
  if (v) os << *v;
  else os << "nan";
}

} // namespace

void write_rate_csv(std::ostream& os, const RateTable& t, const std::string& header) {
  write_comment_lines(os, header);
  os.precision(10);
  os << "# k=" << t.k << " d=" << t.d << " q_k=" << t.q_k << " G=" << t.green_origin << " C_k=" << t.capacity
     << " asymptote=" << t.asymptote << '\n';
  os << "N,L,eps,samples,hits,p_hat,ci_lo,ci_hi,rare_event,normalizer,rate,rate_lo,rate_hi\n";
  for (const auto& r : t.rows) {
    os << r.N << ',' << r.L << ',' << r.eps << ',' << r.estimate.samples << ',' << r.estimate.hits << ',';
    opt_cell(os, r.estimate.p_hat);
    os << ',' << r.estimate.ci.lo << ',' << r.estimate.ci.hi << ',' << (r.estimate.rare_event ? 1 : 0) << ','
       << r.normalizer << ',';
    opt_cell(os, r.rate);
    os << ',';
    opt_cell(os, r.rate_lo);
    os << ',';
    opt_cell(os, r.rate_hi);
    os << '\n';
  }
}

void write_height_csv(std::ostream& os, const HeightResult& r, const std::string& header) {
  write_comment_lines(os, header);
  os.precision(10);
  os << "# G=" << r.green_origin << " block_scale=" << r.config.block_scale
     << " conditioned=" << (r.config.conditioned ? 1 : 0) << " converged=" << (r.converged ? 1 : 0) << '\n';
  os << "N,L,eps,block_sites,mean,std_error,ratio,target,a_N,low_start_mean,high_start_mean,starts_overlap,"
        "mx_block_mean,mx_block_se\n";
  for (const auto& row : r.rows) {
    os << row.N << ',' << row.L << ',' << row.eps << ',' << row.block_sites << ',' << row.mean << ','
       << row.std_error << ',' << row.ratio << ',' << row.target << ',' << row.a_N << ',' << row.low_start_mean
       << ',' << row.high_start_mean << ',' << (row.starts_overlap ? 1 : 0) << ',';
    opt_cell(os, row.mx_block_mean);
    os << ',';
    opt_cell(os, row.mx_block_se);
    os << '\n';
  }
}

void write_assumption_c_csv(std::ostream& os, const QPolynomial& q, int d, int L,
                            const std::vector<AssumptionCRow>& rows, const std::string& header) {
  write_comment_lines(os, header);
  os.precision(12);
  os << "# q=" << q.to_string() << " d=" << d << " L=" << L << '\n';
  os << "eps,min_entry,max_entry,argmin,consistent\n";
  for (const auto& r : rows) {
    os << r.eps << ',' << r.min_entry << ',' << r.max_entry << ',';
    for (std::size_t a = 0; a < r.argmin.size(); ++a) os << (a ? " " : "") << r.argmin[a];
    os << ',' << (r.consistent ? 1 : 0) << '\n';
  }
}

} // namespace entrep
