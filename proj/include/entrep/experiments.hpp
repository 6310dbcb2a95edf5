#pragma once

#include "entrep/lattice.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace entrep {

struct WilsonInterval {
  double lo = 0.0;
  double hi = 1.0;
};

/// Wilson score interval for `hits` successes out of `trials` at normal
/// quantile z.
WilsonInterval wilson_interval(std::uint64_t hits, std::uint64_t trials, double z = 1.959963984540054);

/// Direct Monte Carlo for P(min over V_N of phi >= 0) with exact spectral
/// samples on the torus.
struct RepulsionConfig {
  QPolynomial q{1, {1.0}};
  TorusGrid grid;
  int N = 1;
  std::uint64_t samples = 10000;  // M
  std::uint64_t seed = 1;

  /// V_N with a margin of K+1 sites inside the torus; samples >= 100.
  void validate() const;
};

struct OrthantEstimate {
  int N = 0;
  std::uint64_t samples = 0;
  std::uint64_t hits = 0;
  std::optional<double> p_hat;  // absent with zero hits
  double std_error = 0.0;
  WilsonInterval ci;        // two-sided 95%; with zero hits the one-sided upper bound
  bool one_sided = false;
  bool rare_event = false;  // p_hat < 10/M: use the rate trend only
};

OrthantEstimate estimate_orthant(const RepulsionConfig& cfg);

/// One stream of samples tested against the nested regions V_N for every N in
/// `Ns` (common random numbers). Counts samples that hit V_{N'} but not V_N
/// for some N < N'; the inclusion makes this zero.
struct NestedOrthant {
  std::vector<OrthantEstimate> estimates;  // ordered as Ns
  std::uint64_t inclusion_violations = 0;
};

NestedOrthant estimate_orthant_nested(const QPolynomial& q, const TorusGrid& grid, const std::vector<int>& Ns,
                                      std::uint64_t samples, std::uint64_t seed);

/// P(phi_c >= 0, phi_{c+e_1} >= 0) on the torus against the bivariate orthant
/// formula 1/4 + arcsin(rho)/(2 pi), rho the torus correlation of neighbours.
struct TwoSiteCheck {
  OrthantEstimate estimate;
  double rho = 0.0;
  double exact = 0.0;
  double z_score = 0.0;
};

TwoSiteCheck two_site_orthant(const QPolynomial& q, const TorusGrid& grid, std::uint64_t samples, std::uint64_t seed);

/// 1/4 + arcsin(rho)/(2 pi).
double bivariate_orthant(double rho);

struct RateRow {
  int N = 0;
  int L = 0;
  double eps = 0.0;
  OrthantEstimate estimate;
  double normalizer = 0.0;  // N^{d-2k} log N
  /// -log p_hat / normalizer; absent when p_hat is absent or normalizer is 0.
  std::optional<double> rate;
  std::optional<double> rate_lo, rate_hi;  // from the Wilson interval
};

struct RateTable {
  int k = 1;
  int d = 3;
  double q_k = 1.0;
  double green_origin = 0.0;  // G = G(0,0) on Z^d
  double capacity = 0.0;      // C_k(V)
  double asymptote = 0.0;     // 2k q_k G C_k
  std::vector<RateRow> rows;
};

/// Per-N torus: L = 2N+1+2(K+1) + extra_margin rounded up to even, eps = c/L^2.
struct RateRunSpec {
  std::vector<int> Ns;
  std::uint64_t samples = 100000;
  std::uint64_t seed = 1;
  double mass_constant = 1.0;
  int extra_margin = 0;
};

TorusGrid repulsion_torus(const QPolynomial& q, int d, int N, double mass_constant, int extra_margin = 0);

RateTable rate_table(const QPolynomial& q, int d, const RateRunSpec& spec, double green_origin, double capacity);

/// Conditioned block averages by truncated Gibbs sampling.
struct HeightConfig {
  QPolynomial q{1, {1.0}};
  int d = 3;
  std::vector<int> Ns{4, 8, 16};
  double block_scale = 0.5;     // eps in V_{N,eps}(z)
  std::vector<int> z;           // block centre relative to the centre of V_N; empty = 0
  double mass_constant = 1.0;   // torus mass c / L^2
  int extra_margin = 0;
  int burn_in = 1000;
  int thinning = 10;
  int kept = 200;               // retained samples per chain
  int chains = 4;               // split evenly between the two starts
  double high_start = 0.0;      // initial height of the second start; 0 = 2 sqrt(4kG log N)
  bool conditioned = true;      // false: no wall (control run)
  std::uint64_t seed = 1;
  // Cross-diagnostic: average conditional mean m_x over boxes of side
  // mx_box tiling the block, shifted by mx_shift; 0 disables it.
  int mx_box = 0;
  int mx_shift = 0;
  int mx_every = 10;            // evaluate on every mx_every-th retained sample

  void validate() const;
};

struct ChainSummary {
  double start = 0.0;
  double mean = 0.0;
  double std_error = 0.0;  // batch means
  double min_over_region = 0.0;  // min over all retained states
};

struct HeightRow {
  int N = 0;
  int L = 0;
  double eps = 0.0;
  std::size_t block_sites = 0;
  double mean = 0.0;       // grand mean of the block average
  double std_error = 0.0;  // from the spread of chain means
  double ratio = 0.0;      // mean / sqrt(log N)
  double target = 0.0;     // sqrt(4kG)
  double a_N = 0.0;        // sqrt(4kG log N)
  std::vector<ChainSummary> chains;
  double low_start_mean = 0.0, low_start_se = 0.0;
  double high_start_mean = 0.0, high_start_se = 0.0;
  bool starts_overlap = true;  // |low - high| <= 4 sqrt(se_low^2 + se_high^2)
  std::optional<double> mx_block_mean;
  std::optional<double> mx_block_se;
};

struct HeightResult {
  HeightConfig config;
  double green_origin = 0.0;
  std::vector<HeightRow> rows;
  bool converged = true;
};

/// `green_origin` is G(0,0) on Z^d for the targets.
HeightResult height_run(const HeightConfig& cfg, double green_origin);

struct AssumptionCRow {
  double eps = 0.0;
  double min_entry = 0.0;
  std::vector<int> argmin;  // displacement of the minimum
  double max_entry = 0.0;
  bool consistent = false;  // min >= -1e-12 max
};

/// All entries of J_eps^{-1} on the torus (translation invariant, one FFT).
std::vector<AssumptionCRow> check_assumption_c(const QPolynomial& q, int d, int L, const std::vector<double>& eps);

/// Append-only JSON-lines store of runs.
struct RunRecord {
  static constexpr int kSchemaVersion = 1;
  std::string id;
  std::string kind;
  std::uint64_t seed = 0;
  nlohmann::json config;
  nlohmann::json results;
  nlohmann::json diagnostics;
  double wall_seconds = 0.0;
  std::string code_version;
  int schema_version = kSchemaVersion;

  friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

std::string code_version();

void persist_run(const std::string& path, const RunRecord& record);
/// Throws with the line number on a corrupt line and on a schema version it
/// cannot read.
std::vector<RunRecord> load_runs(const std::string& path);
RunRecord load_run(const std::string& path, const std::string& id);

nlohmann::json to_json(const RepulsionConfig& c);
RepulsionConfig repulsion_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const HeightConfig& c);
HeightConfig height_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const OrthantEstimate& e);
nlohmann::json to_json(const HeightResult& r);
nlohmann::json to_json(const RateTable& t);

void write_rate_csv(std::ostream& os, const RateTable& t, const std::string& header = {});
void write_height_csv(std::ostream& os, const HeightResult& r, const std::string& header = {});
void write_assumption_c_csv(std::ostream& os, const QPolynomial& q, int d, int L,
                            const std::vector<AssumptionCRow>& rows, const std::string& header = {});

} // namespace entrep
