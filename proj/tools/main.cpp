#include "config.hpp"
#include "svg.hpp"

#include "entrep/capacity.hpp"
#include "entrep/conditional.hpp"
#include "entrep/error.hpp"
#include "entrep/experiments.hpp"
#include "entrep/lattice.hpp"
#include "entrep/spectral.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <omp.h>

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace entrep;
using cli::Config;

namespace {

enum Exit { kOk = 0, kFailed = 1, kUnconverged = 2 };

const std::map<std::string, std::vector<std::string>> kEchoed = {
    {"validate", {"model", "validate"}},
    {"green", {"model", "grid", "green"}},
    {"sample", {"model", "grid", "run", "sample"}},
    {"conditional", {"model", "grid", "conditional"}},
    {"capacity", {"model", "capacity"}},
    {"repulsion", {"model", "grid", "run", "repulsion"}},
    {"height", {"model", "run", "height"}},
    {"check-c", {"model", "grid", "check_c"}}};

const std::map<std::string, std::string> kDescriptions = {
    {"validate", "check assumptions (a) and (b) for the model"},
    {"green", "torus and Z^d Green function, decay constant"},
    {"sample", "spectral samples and their empirical covariance"},
    {"conditional", "G_L curve and Markov check"},
    {"capacity", "obstacle problem, extrapolation and dual bounds"},
    {"repulsion", "orthant probabilities and normalised rates"},
    {"height", "conditioned block averages by truncated Gibbs"},
    {"check-c", "sign of the inverse of J_eps on the torus"}};

struct Run {
  std::string command;
  Config cfg;
  fs::path dir;
  bool svg = false;
  std::string header;
  nlohmann::json results = nlohmann::json::object();
  nlohmann::json diagnostics = nlohmann::json::object();

  QPolynomial q() const { return QPolynomial::from_coefficients(cfg.reals("model.q")); }
  int d() const { return cfg.integer("model.d"); }
  TorusGrid grid() const { return TorusGrid{d(), cfg.integer("grid.L"), cfg.real("grid.eps")}; }
  std::uint64_t seed() const {
    const auto& v = cfg.str("run.seed");
    std::uint64_t s = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), s);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty())
      throw Error("cli", "run.seed must be a non-negative integer, got '" + v + "'");
    return s;
  }

  fs::path write(const std::string& name, const std::function<void(std::ostream&)>& body) const {
    const auto path = dir / name;
    std::ofstream os(path);
    if (!os) throw Error("cli", "cannot write " + path.string());
    body(os);
    if (!os) throw Error("cli", "failed writing " + path.string());
    std::cout << "wrote " << path.string() << '\n';
    return path;
  }
  // CSV whose first lines carry the resolved config.
  fs::path write_csv(const std::string& name, const std::function<void(std::ostream&)>& body) const {
    return write(name, [&](std::ostream& os) {
      std::istringstream hs(header);
      for (std::string line; std::getline(hs, line);) os << "# " << line << '\n';
      body(os);
    });
  }
  nlohmann::json config_json() const {
    nlohmann::json j = nlohmann::json::object();
    std::istringstream hs(header);
    for (std::string line; std::getline(hs, line);) {
      const auto eq = line.find(" = ");
      if (eq != std::string::npos) j[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return j;
  }
  void plot(const std::string& name, const std::string& title, const std::string& xl, const std::string& yl,
            const std::vector<cli::Series>& series) const {
    if (!svg) return;
    cli::write_line_chart((dir / name).string(), title, xl, yl, series);
    std::cout << "wrote " << (dir / name).string() << '\n';
  }
};

double origin_green(const QPolynomial& q, int d) {
  const std::vector<int> zero(static_cast<std::size_t>(d), 0);
  return green_infinite(q, d, zero).value;
}

int cmd_validate(Run& r) {
  const auto rep = validate_model(ModelSpec{r.q(), r.d()}, r.cfg.integer("validate.grid_points"));
  r.write_csv("validate.csv", [&](std::ostream& os) {
    os.precision(12);
    os << "assumption,passed,witness,message\n";
    for (const auto& a : rep.results) {
      os << a.name << ',' << (a.passed ? 1 : 0) << ',';
      if (a.witness) os << *a.witness;
      os << ",\"" << a.message << "\"\n";
    }
  });
  for (const auto& a : rep.results) r.results[a.name] = a.passed;
  if (!rep.passed()) throw Error("lattice-core", rep.first_failure()->message);
  return kOk;
}

int cmd_green(Run& r) {
  const auto q = r.q();
  const int d = r.d();
  const auto table = green_torus(q, r.grid());
  r.write_csv("green_torus.csv", [&](std::ostream& os) { write_green_csv(os, table); });

  const int rmax = r.cfg.integer("green.max_radius");
  std::vector<std::vector<int>> xs;
  for (int t = 0; t <= rmax; ++t) {
    std::vector<int> x(static_cast<std::size_t>(d), 0);
    x[0] = t;
    xs.push_back(x);
  }
  // Finer nodes for the oscillating factor at larger |x|.
  const auto inf = green_infinite_many(q, d, xs, QuadratureSpec{std::max(64, 32 * rmax), 4, 1.5, 1e-7});
  bool converged = true;
  r.write_csv("green_axis.csv", [&](std::ostream& os) {
    os.precision(12);
    os << "r,torus,infinite,infinite_error,converged,relative_difference\n";
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double t = table.at(xs[i]);
      os << i << ',' << t << ',' << inf[i].value << ',' << inf[i].error_estimate << ',' << (inf[i].converged ? 1 : 0)
         << ',' << std::abs(t - inf[i].value) / inf[i].value << '\n';
      converged = converged && inf[i].converged;
    }
  });
  r.results["green_origin"] = inf[0].value;
  r.results["torus_origin"] = table.origin();

  if (r.cfg.flag("green.decay")) {
    int lo = r.cfg.integer("green.decay_rmin"), hi = r.cfg.integer("green.decay_rmax");
    const bool free3 = q.k() == 1 && d == 3;
    QuadratureSpec quad = free3 ? QuadratureSpec{64, 4, 1.5, 1e-6} : QuadratureSpec{64, 3, 1.25, 1e-6};
    if (lo == 0) lo = free3 ? 15 : 8;
    if (hi == 0) hi = free3 ? 30 : 16;
    const auto dec = decay_constant(q, d, lo, hi, quad, free3 ? 2 : 1);
    r.write_csv("decay.csv", [&](std::ostream& os) { write_decay_csv(os, q, d, dec); });
    r.results["eta"] = dec.eta;
    r.results["eta_error"] = dec.eta_error;
    r.results["ratio_variation"] = dec.ratio_variation(lo, hi);
    cli::Series axis{"axis", {}, {}}, diag{"diagonal", {}, {}}, eta{"eta", {}, {}, true};
    for (const auto& row : dec.rows) {
      auto& s = row.direction == "axis" ? axis : diag;
      s.x.push_back(row.radius);
      s.y.push_back(row.ratio);
    }
    eta.x = {double(lo), double(hi) * std::sqrt(double(d))};
    eta.y = {dec.eta, dec.eta};
    r.plot("decay.svg", "q_k G(0,x) |x|^(d-2k)", "|x|", "ratio", {axis, diag, eta});
  }
  return converged ? kOk : kUnconverged;
}

int cmd_sample(Run& r) {
  const auto q = r.q();
  const auto grid = r.grid();
  const auto M = static_cast<std::size_t>(r.cfg.integer("sample.samples"));
  const auto nfields = static_cast<std::size_t>(r.cfg.integer("sample.fields"));
  const auto blocks = static_cast<std::size_t>(r.cfg.integer("sample.blocks"));
  const auto seed = r.seed();
  const SpectralSampler sampler(q, grid);
  CovarianceAccumulator acc(grid, canonical_displacements(grid.d, r.cfg.real("sample.max_radius")));
  const std::size_t batch = 256;
  std::vector<std::vector<double>> buf(batch, std::vector<double>(grid.sites()));
  for (std::size_t start = 0; start < M; start += batch) {
    const auto n = static_cast<std::int64_t>(std::min(batch, M - start));
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) sampler.draw_into(seed, start + static_cast<std::size_t>(i), buf[i]);
    for (std::int64_t i = 0; i < n; ++i) acc.add(buf[i]);
    if (start == 0 && nfields > 0)
      r.write_csv("fields.csv", [&](std::ostream& os) {
        os.precision(12);
        os << "sample";
        for (int a = 1; a <= grid.d; ++a) os << ",x" << a;
        os << ",value\n";
        for (std::size_t f = 0; f < std::min<std::size_t>(nfields, static_cast<std::size_t>(n)); ++f)
          for (std::size_t s = 0; s < grid.sites(); ++s) {
            os << f;
            for (int c : grid.coords(s)) os << ',' << c;
            os << ',' << buf[f][s] << '\n';
          }
      });
  }
  const auto est = acc.estimate(std::min(blocks, M));
  const auto table = green_torus(q, grid);
  const auto agree = compare_covariance(est, table);
  r.write_csv("covariance.csv", [&](std::ostream& os) {
    os.precision(12);
    os << "# max_abs_z=" << agree.max_abs_z << " chi_square=" << agree.chi_square << " dof=" << agree.dof
       << " p_value=" << agree.p_value << '\n';
    os << "displacement,empirical,std_error,exact,z\n";
    for (const auto& e : est) {
      const double g = table.at(e.displacement);
      for (std::size_t a = 0; a < e.displacement.size(); ++a) os << (a ? " " : "") << e.displacement[a];
      os << ',' << e.value << ',' << e.std_error << ',' << g << ',' << (e.value - g) / e.std_error << '\n';
    }
  });
  r.results = {{"max_abs_z", agree.max_abs_z}, {"chi_square", agree.chi_square}, {"dof", agree.dof},
               {"p_value", agree.p_value}};
  return kOk;
}

int cmd_conditional(Run& r) {
  const auto q = r.q();
  const int d = r.d();
  const double eps = r.cfg.real("conditional.eps");
  const double ref = eps == 0.0 ? origin_green(q, d) : 0.0;
  const auto curve = g_l_curve(q, d, r.cfg.integers("conditional.boxes"), eps, ref);
  r.write_csv("g_l.csv", [&](std::ostream& os) {
    os.precision(12);
    os << "# reference=" << curve.reference << " increasing=" << (curve.increasing ? 1 : 0)
       << " gaps_decreasing=" << (curve.gaps_decreasing ? 1 : 0) << '\n';
    os << "L_box,g_l,gap,cg_iterations\n";
    for (std::size_t i = 0; i < curve.rows.size(); ++i) {
      os << curve.rows[i].L_box << ',' << curve.rows[i].g_l << ',';
      if (!curve.gaps.empty()) os << curve.gaps[i];
      os << ',' << curve.rows[i].cg_iterations << '\n';
    }
  });
  cli::Series gl{"G_L", {}, {}}, g{"G", {}, {}, true};
  for (const auto& row : curve.rows) {
    gl.x.push_back(row.L_box);
    gl.y.push_back(row.g_l);
    g.x.push_back(row.L_box);
    g.y.push_back(curve.reference);
  }
  r.plot("g_l.svg", "G_L against the box side", "L_box", "G_L", ref > 0 ? std::vector{gl, g} : std::vector{gl});

  const auto grid = r.grid();
  const auto box = make_box(std::vector<int>(static_cast<std::size_t>(d), grid.L / 2),
                            r.cfg.integer("conditional.markov_box"), q.K());
  const auto mk = markov_check(q, grid, box);
  r.write_csv("markov.csv", [&](std::ostream& os) {
    os.precision(12);
    os << "L_box,residual,boundary_mismatch,exterior_weight,conditioning_sites,dense\n";
    os << box.L_box << ',' << mk.residual << ',' << mk.boundary_mismatch << ',' << mk.exterior_weight << ','
       << mk.conditioning_sites << ',' << (mk.dense ? 1 : 0) << '\n';
  });
  r.results = {{"markov_residual", mk.residual}, {"gaps_decreasing", curve.gaps_decreasing}};
  return kOk;
}

CapacityStudySpec capacity_spec(const Run& r) {
  CapacityStudySpec s;
  s.q = r.q();
  s.d = r.d();
  s.half_width = r.cfg.real("capacity.half_width");
  s.inverse_steps = r.cfg.integers("capacity.steps");
  s.radii = r.cfg.reals("capacity.radii");
  s.kernel_resolutions = r.cfg.integers("capacity.kernel");
  s.near_field = r.cfg.integer("capacity.near_field");
  const auto& fit = r.cfg.str("capacity.fit");
  if (fit != "reciprocal" && fit != "additive")
    throw Error("cli", "capacity.fit must be reciprocal or additive, got '" + fit + "'");
  s.fit = fit == "additive" ? RadiusFit::additive : RadiusFit::reciprocal;
  s.options.tolerance = r.cfg.real("capacity.tolerance");
  s.options.max_iterations = r.cfg.integer("capacity.max_iterations");
  s.eta = r.cfg.real("capacity.eta");
  return s;
}

int cmd_capacity(Run& r) {
  const auto st = capacity_study(capacity_spec(r));
  const int k = st.spec.q.k(), d = st.spec.d;
  r.write_csv("capacity.csv", [&](std::ostream& os) { write_capacity_csv(os, st); });
  r.write_csv("capacity_samples.csv", [&](std::ostream& os) { write_capacity_samples_csv(os, st); });
  auto wrap = [&](const std::string& text) {
    nlohmann::json j;
    j["command"] = r.command;
    j["config"] = r.config_json();
    j["result"] = nlohmann::json::parse(text);
    return j.dump();
  };
  r.write("extrapolation.json", [&](std::ostream& os) {
    std::ostringstream ss;
    write_extrapolation_json(ss, k, d, st.extrapolation);
    os << wrap(ss.str()) << '\n';
  });
  r.write("capacity.jsonl", [&](std::ostream& os) {
    for (const auto& res : st.results) {
      std::ostringstream ss;
      write_capacity_json(ss, res);
      os << wrap(ss.str()) << '\n';
    }
  });
  const auto& finest = st.solutions.back();
  r.write_csv("minimizer.csv", [&](std::ostream& os) { write_minimizer_csv(os, finest); });
  for (std::size_t i = 0; i < st.spectra.size(); ++i)
    r.write_csv("spectrum_" + std::to_string(st.results[i].kernel_resolution) + ".csv",
                [&](std::ostream& os) { write_spectrum_csv(os, st.spectra[i]); });

  cli::Series primal{"primal", {}, {}}, dual{"eigen dual", {}, {}};
  for (const auto& res : st.results) {
    primal.x.push_back(res.problem.h_step);
    primal.y.push_back(res.primal);
    dual.x.push_back(res.problem.h_step);
    dual.y.push_back(res.dual_capacity);
  }
  r.plot("capacity.svg", "capacity at matched refinement", "h", "C_k", {primal, dual});

  r.results["extrapolated"] = st.extrapolation.refused ? nlohmann::json(nullptr) : nlohmann::json(st.extrapolation.value);
  r.results["gaps"] = nlohmann::json::array();
  for (const auto& res : st.results) r.results["gaps"].push_back(res.gap);
  r.diagnostics["converged"] = st.converged;
  return st.converged ? kOk : kUnconverged;
}

int cmd_repulsion(Run& r) {
  const auto q = r.q();
  const int d = r.d();
  RateRunSpec spec;
  spec.Ns = r.cfg.integers("repulsion.Ns");
  spec.samples = static_cast<std::uint64_t>(r.cfg.integer("repulsion.samples"));
  spec.seed = r.seed();
  spec.mass_constant = r.cfg.real("repulsion.mass_constant");
  spec.extra_margin = r.cfg.integer("repulsion.extra_margin");
  double cap = r.cfg.real("repulsion.capacity");
  if (cap <= 0.0) {
    if (d != 3) throw Error("cli", "repulsion.capacity must be given when d != 3");
    CapacityStudySpec cs;
    cs.q = q;
    cs.d = d;
    cs.kernel_resolutions = {8};
    const auto st = capacity_study(cs);
    cap = st.extrapolation.refused ? st.results.front().primal : st.extrapolation.value;
  }
  const auto table = rate_table(q, d, spec, origin_green(q, d), cap);
  r.write_csv("rate.csv", [&](std::ostream& os) { write_rate_csv(os, table); });
  r.results = to_json(table);

  if (r.cfg.flag("repulsion.two_site")) {
    const auto t = two_site_orthant(q, r.grid(), spec.samples, spec.seed);
    r.write_csv("two_site.csv", [&](std::ostream& os) {
      os.precision(12);
      os << "rho,exact,p_hat,std_error,ci_lo,ci_hi,z\n";
      os << t.rho << ',' << t.exact << ',' << t.estimate.p_hat.value_or(NAN) << ',' << t.estimate.std_error << ','
         << t.estimate.ci.lo << ',' << t.estimate.ci.hi << ',' << t.z_score << '\n';
    });
    r.diagnostics["two_site_z"] = t.z_score;
  }
  cli::Series rate{"-log p / (N^(d-2k) log N)", {}, {}}, asym{"asymptote", {}, {}, true};
  for (const auto& row : table.rows) {
    if (!row.rate) continue;
    rate.x.push_back(row.N);
    rate.y.push_back(*row.rate);
    asym.x.push_back(row.N);
    asym.y.push_back(table.asymptote);
  }
  r.plot("rate.svg", "normalised repulsion rate", "N", "rate", {rate, asym});
  return kOk;
}

int cmd_height(Run& r) {
  HeightConfig c;
  c.q = r.q();
  c.d = r.d();
  c.Ns = r.cfg.integers("height.Ns");
  c.block_scale = r.cfg.real("height.block_scale");
  c.z = r.cfg.integers("height.z");
  c.mass_constant = r.cfg.real("height.mass_constant");
  c.extra_margin = r.cfg.integer("height.extra_margin");
  c.burn_in = r.cfg.integer("height.burn_in");
  c.thinning = r.cfg.integer("height.thinning");
  c.kept = r.cfg.integer("height.kept");
  c.chains = r.cfg.integer("height.chains");
  c.high_start = r.cfg.real("height.high_start");
  c.conditioned = r.cfg.flag("height.conditioned");
  c.seed = r.seed();
  c.mx_box = r.cfg.integer("height.mx_box");
  c.mx_shift = r.cfg.integer("height.mx_shift");
  c.mx_every = r.cfg.integer("height.mx_every");
  const auto res = height_run(c, origin_green(c.q, c.d));
  r.write_csv("height.csv", [&](std::ostream& os) { write_height_csv(os, res); });
  r.results = to_json(res);
  cli::Series ratio{"mean / sqrt(log N)", {}, {}}, target{"sqrt(4kG)", {}, {}, true};
  for (const auto& row : res.rows) {
    ratio.x.push_back(row.N);
    ratio.y.push_back(row.ratio);
    target.x.push_back(row.N);
    target.y.push_back(row.target);
  }
  r.plot("height.svg", "conditioned block average", "N", "ratio", {ratio, target});
  r.diagnostics["converged"] = res.converged;
  return res.converged ? kOk : kUnconverged;
}

int cmd_check_c(Run& r) {
  const auto q = r.q();
  const int d = r.d(), L = r.cfg.integer("grid.L");
  const auto rows = check_assumption_c(q, d, L, r.cfg.reals("check_c.eps"));
  r.write_csv("check_c.csv", [&](std::ostream& os) { write_assumption_c_csv(os, q, d, L, rows); });
  r.results = nlohmann::json::array();
  for (const auto& row : rows)
    r.results.push_back({{"eps", row.eps}, {"min", row.min_entry}, {"max", row.max_entry}, {"consistent", row.consistent}});
  return kOk;
}

const std::map<std::string, std::function<int(Run&)>> kCommands = {
    {"validate", cmd_validate},   {"green", cmd_green},       {"sample", cmd_sample},
    {"conditional", cmd_conditional}, {"capacity", cmd_capacity}, {"repulsion", cmd_repulsion},
    {"height", cmd_height},       {"check-c", cmd_check_c}};

// "--section.key=value" or "--section.key value".
std::vector<std::pair<std::string, std::string>> dotted_overrides(const std::vector<std::string>& rest) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < rest.size(); ++i) {
    const auto& a = rest[i];
    if (a.rfind("--", 0) != 0 || a.find('.') == std::string::npos)
      throw Error("cli", "unexpected argument '" + a + "'");
    const auto body = a.substr(2);
    const auto eq = body.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else {
      if (i + 1 >= rest.size()) throw Error("cli", "missing value for " + a);
      out.emplace_back(body, rest[++i]);
    }
  }
  return out;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entropic repulsion experiments for Gaussian membrane models"};
  app.require_subcommand(1);
  std::string config_path, output_dir, seed, from;
  int workers = -1;
  bool svg = false;
  std::vector<CLI::App*> subs;
  for (const auto& [name, fn] : kCommands) {
    auto* s = app.add_subcommand(name, kDescriptions.at(name));
    s->allow_extras();
    s->add_option("-c,--config", config_path, "configuration file");
    s->add_option("--seed", seed, "master seed");
    s->add_option("--workers", workers, "OpenMP threads (0 = default)");
    s->add_option("-o,--output", output_dir, "output directory");
    s->add_flag("--svg", svg, "also write SVG plots");
    subs.push_back(s);
  }
  auto* rerun = app.add_subcommand("rerun", "rerun the command embedded in a CSV header");
  rerun->add_option("csv", from, "CSV written by this tool")->required();
  rerun->add_option("-o,--output", output_dir, "output directory");
  rerun->add_option("--workers", workers, "OpenMP threads (0 = default)");
  rerun->add_flag("--svg", svg, "also write SVG plots");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kFailed;
  }

  try {
    Run r;
    r.cfg = Config::defaults();
    if (rerun->parsed()) {
      const auto emb = cli::read_embedded_config(cli::read_file(from));
      r.command = emb.command;
      if (!kCommands.contains(r.command)) throw Error("cli", "unknown embedded command '" + r.command + "'");
      for (const auto& [k, v] : emb.entries) r.cfg.set(k, v, from);
    } else {
      for (auto* s : subs)
        if (s->parsed()) r.command = s->get_name();
      if (!config_path.empty()) r.cfg.merge_ini(cli::read_file(config_path), config_path);
    }
    if (const char* env = std::getenv("ENTREP_OUTPUT_DIR")) r.cfg.set("output.dir", env, "ENTREP_OUTPUT_DIR");
    if (const char* env = std::getenv("ENTREP_WORKERS")) r.cfg.set("exec.workers", env, "ENTREP_WORKERS");
    if (!rerun->parsed()) {
      for (auto* s : subs)
        if (s->parsed())
          for (const auto& [k, v] : dotted_overrides(s->remaining())) r.cfg.set(k, v, "--" + k);
      if (!seed.empty()) r.cfg.set("run.seed", seed, "--seed");
    }
    if (!output_dir.empty()) r.cfg.set("output.dir", output_dir, "--output");
    if (workers >= 0) r.cfg.set("exec.workers", std::to_string(workers), "--workers");
    if (svg) r.cfg.set("output.svg", "true", "--svg");

    const int nthreads = r.cfg.integer("exec.workers");
    if (nthreads < 0) throw Error("cli", "exec.workers must be >= 0");
    if (nthreads > 0) omp_set_num_threads(nthreads);
    r.seed();
    r.dir = r.cfg.str("output.dir");
    fs::create_directories(r.dir);
    r.svg = r.cfg.flag("output.svg");
    r.header = "command = " + r.command + "\n" + r.cfg.resolved(kEchoed.at(r.command)) +
               "code_version = " + code_version() + "\n";

    const auto t0 = std::chrono::steady_clock::now();
    const int code = kCommands.at(r.command)(r);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    RunRecord rec;
    rec.id = r.command + "-" + r.cfg.str("run.seed") + "-" + std::to_string(std::hash<std::string>{}(r.header));
    rec.kind = r.command;
    rec.seed = r.seed();
    rec.config = r.config_json();
    rec.results = r.results;
    rec.diagnostics = r.diagnostics;
    rec.diagnostics["exit_code"] = code;
    rec.diagnostics["workers"] = omp_get_max_threads();
    rec.wall_seconds = wall;
    rec.code_version = code_version();
    persist_run((r.dir / r.cfg.str("output.store")).string(), rec);
    if (code == kUnconverged) std::cerr << "warning: " << r.command << " did not converge\n";
    return code;
  } catch (const Error& e) {
    std::cerr << "error [" << e.module() << "]: " << e.what() << '\n';
    return kFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailed;
  }
}
