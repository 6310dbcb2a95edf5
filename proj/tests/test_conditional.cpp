#include "entrep/conditional.hpp"
#include "entrep/error.hpp"
#include "entrep/spectral.hpp"

#include <Eigen/Dense>
#include <doctest.h>
#include <omp.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace entrep;

namespace {

QPolynomial free_field() { return QPolynomial(1, {1.0}); }
QPolynomial membrane() { return QPolynomial(2, {1.0}); }
QPolynomial mixed() { return QPolynomial(1, {1.0, 0.5}); }

LatticeField random_field(const TorusGrid& g, unsigned seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> n;
  LatticeField f(g);
  for (auto& v : f.values()) v = n(gen);
  return f;
}

// Dense covariance of the torus field: the inverse of J assembled column by
// column from j_apply on unit vectors.
Eigen::MatrixXd dense_covariance(const QPolynomial& q, const TorusGrid& g) {
  const auto n = static_cast<Eigen::Index>(g.sites());
  Eigen::MatrixXd J(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    LatticeField e(g);
    e[static_cast<std::size_t>(j)] = 1.0;
    const auto col = j_apply(q, g.eps, e);
    for (Eigen::Index i = 0; i < n; ++i) J(i, j) = col[static_cast<std::size_t>(i)];
  }
  return J.llt().solve(Eigen::MatrixXd::Identity(n, n));
}

} // namespace

TEST_CASE("J stencil of the free field") {
  const auto st = JStencil::build(free_field(), 3, 0.0);
  CHECK(st.diagonal == doctest::Approx(1.0));
  REQUIRE(st.offsets.size() == 6);
  for (double w : st.weights) CHECK(w == doctest::Approx(-1.0 / 6.0));
  const auto m = JStencil::build(membrane(), 5, 0.0);
  CHECK(m.diagonal == doctest::Approx(1.1));
  double row = m.diagonal;
  for (double w : m.weights) row += w;
  CHECK(std::abs(row) < 1e-14);  // row sums equal q(0) = 0
}

TEST_CASE("make_box geometry") {
  const auto a = make_box({0, 0, 0}, 3, 1);
  CHECK(a.interior.size() == 1);
  CHECK(a.boundary.size() == 124);  // max-distance 1 or 2
  const auto b = make_box({0, 0, 0}, 4, 2);
  CHECK(b.interior.size() == 1);
  CHECK(b.boundary.size() == 342);  // max-distance 1..3
  CHECK_THROWS_AS(make_box({0, 0, 0}, 4, 1), Error);
  CHECK_THROWS_AS(make_box({0, 0, 0}, 3, 2), Error);

  // separation: every site within l1-distance K of B lies in B u dB
  const auto g = make_box({0, 0, 0}, 7, 3);
  for (const auto& x : g.interior)
    for (const auto& o : JStencil::build(QPolynomial(1, {1.0, 1.0, 1.0}), 3, 0.0).offsets) {
      int m = 0;
      for (int i = 0; i < 3; ++i) m = std::max(m, std::abs(x[i] + o[i]));
      CHECK(m <= g.outer_radius);
    }
}

TEST_CASE("conditional law basics") {
  const TorusGrid g{3, 9, 0.0};
  const auto geo = make_box({4, 4, 4}, 3, 1);
  const auto zero = conditional_law(free_field(), g, geo, std::vector<double>(geo.boundary.size(), 0.0));
  CHECK(zero.mean[0] == 0.0);
  CHECK(zero.center_variance == doctest::Approx(1.0).epsilon(1e-12));

  const auto f = random_field(g, 3);
  const auto law = conditional_law(free_field(), geo, f);
  double avg = 0.0;
  for (int a = 0; a < 3; ++a)
    for (int s : {-1, 1}) {
      std::vector<int> y{4, 4, 4};
      y[a] += s;
      avg += f.at(y) / 6.0;
    }
  CHECK(law.mean[0] == doctest::Approx(avg).epsilon(1e-12));

  // superposition in the boundary data
  const auto geo2 = make_box({4, 4, 4}, 5, 1);
  const auto h = random_field(g, 4);
  LatticeField sum(g);
  for (std::size_t i = 0; i < g.sites(); ++i) sum[i] = 2.0 * f[i] - 0.5 * h[i];
  const auto lf = conditional_law(mixed(), geo2, f, 1e-13);
  const auto lh = conditional_law(mixed(), geo2, h, 1e-13);
  const auto ls = conditional_law(mixed(), geo2, sum, 1e-13);
  for (std::size_t i = 0; i < ls.mean.size(); ++i)
    CHECK(ls.mean[i] == doctest::Approx(2.0 * lf.mean[i] - 0.5 * lh.mean[i]).epsilon(1e-9));
}

TEST_CASE("conditional mean matches the dense Schur complement") {
  const TorusGrid g{3, 10, 0.05};
  const auto q = mixed();  // K = 2
  const auto geo = make_box({5, 5, 5}, 6, 2);
  const auto f = random_field(g, 9);
  const auto law = conditional_law(q, geo, f, 1e-13);

  const auto S = dense_covariance(q, g);
  const auto inner = torus_sites(g, geo, geo.interior);
  std::vector<char> in_b(g.sites(), 0);
  for (auto s : inner) in_b[s] = 1;
  std::vector<Eigen::Index> rest;
  for (std::size_t s = 0; s < g.sites(); ++s)
    if (!in_b[s]) rest.push_back(static_cast<Eigen::Index>(s));
  const auto nr = static_cast<Eigen::Index>(rest.size());
  Eigen::MatrixXd Scc(nr, nr), Sbc(static_cast<Eigen::Index>(inner.size()), nr);
  Eigen::VectorXd phi(nr);
  for (Eigen::Index i = 0; i < nr; ++i) {
    phi(i) = f[static_cast<std::size_t>(rest[i])];
    for (Eigen::Index j = 0; j < nr; ++j) Scc(i, j) = S(rest[i], rest[j]);
    for (std::size_t b = 0; b < inner.size(); ++b) Sbc(static_cast<Eigen::Index>(b), i) = S(static_cast<Eigen::Index>(inner[b]), rest[i]);
  }
  const Eigen::VectorXd oracle = Sbc * Scc.llt().solve(phi);
  double err = 0.0;
  for (std::size_t b = 0; b < inner.size(); ++b) err = std::max(err, std::abs(oracle(static_cast<Eigen::Index>(b)) - law.mean[b]));
  CHECK(err < 1e-8);

  // the conditional variance is the Schur complement at the center
  const auto c = static_cast<Eigen::Index>(inner[geo.center_index()]);
  Eigen::VectorXd sc(nr);
  for (Eigen::Index i = 0; i < nr; ++i) sc(i) = S(c, rest[i]);
  CHECK(law.center_variance == doctest::Approx(S(c, c) - sc.dot(Scc.llt().solve(sc))).epsilon(1e-9));
  CHECK(law.center_variance <= S(c, c));
}

TEST_CASE("covariance conditional mean agrees with the precision-side law in d=5") {
  const TorusGrid g{5, 8, 0.5};
  const auto geo = make_box({4, 4, 4, 4, 4}, 4, 2);
  const auto f = spectral_sample(g, membrane(), 17);
  const auto law = conditional_law(membrane(), geo, f, 1e-13);
  const auto inner = torus_sites(g, geo, geo.interior);
  std::vector<std::size_t> rest;
  for (std::size_t s = 0; s < g.sites(); ++s)
    if (s != inner[0]) rest.push_back(s);
  std::vector<double> vals;
  for (auto s : rest) vals.push_back(f[s]);
  const auto mean = covariance_conditional_mean(membrane(), g, inner, rest, vals);
  CHECK(std::abs(mean[0] - law.mean[0]) < 1e-8);
}

TEST_CASE("Markov property of the cut") {
  const auto free_rep = markov_check(free_field(), TorusGrid{3, 10, 0.1}, make_box({5, 5, 5}, 3, 1));
  CHECK(free_rep.dense);
  CHECK(free_rep.residual < 1e-10);

  const auto mem_rep = markov_check(membrane(), TorusGrid{5, 8, 0.5}, make_box({4, 4, 4, 4, 4}, 4, 2));
  CHECK(!mem_rep.dense);
  CHECK(mem_rep.residual < 1e-10);

  // a cut one shell thick cannot screen a range-2 operator
  const auto thin = markov_check(membrane(), TorusGrid{5, 8, 0.5}, make_shell_geometry({4, 4, 4, 4, 4}, 0, 1, 2));
  CHECK(thin.residual > 1e-3);
}

TEST_CASE("G_L grows toward G") {
  const auto curve = g_l_curve(free_field(), 3, {3, 5, 9, 17}, 0.0, 1.516386059151978);
  CHECK(curve.rows.front().g_l == doctest::Approx(1.0).epsilon(1e-12));
  for (const auto& r : curve.rows) {
    CHECK(r.g_l > 0.0);
    CHECK(r.g_l <= 1.516386059151978);
  }
  CHECK(curve.increasing);
  CHECK(curve.gaps_decreasing);
}

TEST_CASE("single-site law") {
  const TorusGrid g{3, 6, 0.0};
  const auto f = random_field(g, 1);
  const std::vector<int> x{2, 3, 1};
  const auto law = single_site_law(free_field(), f, x);
  double avg = 0.0;
  for (int a = 0; a < 3; ++a)
    for (int s : {-1, 1}) {
      auto y = x;
      y[a] += s;
      avg += f.at(y) / 6.0;
    }
  CHECK(law.mean == doctest::Approx(avg).epsilon(1e-13));
  CHECK(law.variance == doctest::Approx(1.0));

  const TorusGrid ge{3, 6, 0.2};
  const auto c = LatticeField::constant(ge, 1.7);
  const auto st = JStencil::build(mixed(), 3, 0.2);
  const auto lc = single_site_law(mixed(), c, x);
  CHECK(lc.mean == doctest::Approx(1.7 * (1.0 - eval_q(mixed(), 0.2) / st.diagonal)).epsilon(1e-12));
  CHECK(single_site_law(mixed(), LatticeField::constant(g, 1.7), x).mean == doctest::Approx(1.7));
}

TEST_CASE("Gauss-Seidel fixed point equals the conditional mean") {
  const TorusGrid g{3, 12, 0.0};
  const auto geo = make_box({6, 6, 6}, 6, 2);
  const auto f = random_field(g, 5);
  const auto law = conditional_law(mixed(), geo, f, 1e-13);
  const auto gs = gauss_seidel_interior(mixed(), geo, f, 1e-14);
  double err = 0.0;
  for (std::size_t i = 0; i < gs.size(); ++i) err = std::max(err, std::abs(gs[i] - law.mean[i]));
  CHECK(err < 1e-8);
}

TEST_CASE("truncated normal sampling") {
  CHECK(truncated_normal_tail(0.0, 0.5) == doctest::Approx(0.6744897501960817).epsilon(1e-12));
  for (double alpha : {-12.0, -1.0, 3.0, 7.9, 8.1, 25.0, 40.0, 200.0}) {
    for (double v : {1e-300, 1e-9, 0.3, 0.999999}) {
      const double z = truncated_normal_tail(alpha, v);
      CHECK(std::isfinite(z));
      CHECK(z >= alpha);
      if (alpha > -5.0) CHECK(log_normal_tail(z) - log_normal_tail(alpha) == doctest::Approx(std::log(v)).epsilon(1e-9));
    }
  }
  CHECK(std::abs(log_normal_tail(30.0 - 1e-9) - log_normal_tail(30.0 + 1e-9)) < 1e-7);
}

TEST_CASE("Gibbs chains are reproducible and thread-independent") {
  const TorusGrid g{3, 8, 0.1};
  const auto a = gibbs_sweep(mixed(), LatticeField(g), 9);
  const auto b = gibbs_sweep(mixed(), LatticeField(g), 9);
  CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));

  const TorusGrid g9{3, 9, 0.1};
  GibbsChain c1(membrane(), LatticeField(g9), 4), c4(membrane(), LatticeField(g9), 4);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  for (int i = 0; i < 5; ++i) c1.sweep(SweepOrder::colored);
  omp_set_num_threads(4);
  for (int i = 0; i < 5; ++i) c4.sweep(SweepOrder::colored);
  omp_set_num_threads(saved);
  CHECK(std::equal(c1.state().values().begin(), c1.state().values().end(), c4.state().values().begin()));

  GibbsChain bad(membrane(), LatticeField(TorusGrid{3, 7, 0.1}), 1);
  CHECK_THROWS_AS(bad.sweep(SweepOrder::colored), Error);
}

TEST_CASE("checkpoints resume a chain exactly") {
  const TorusGrid g{3, 6, 0.2};
  GibbsChain chain(mixed(), LatticeField(g), 77);
  for (int i = 0; i < 3; ++i) chain.sweep();
  std::stringstream ss;
  save_checkpoint(ss, chain.checkpoint());
  auto resumed = GibbsChain::resume(load_checkpoint(ss));
  CHECK(resumed.sweeps_done() == 3);
  for (int i = 0; i < 4; ++i) {
    chain.sweep();
    resumed.sweep();
  }
  CHECK(std::equal(chain.state().values().begin(), chain.state().values().end(), resumed.state().values().begin()));
  std::stringstream junk("{\"kind\":\"other\"}");
  CHECK_THROWS_AS(load_checkpoint(junk), Error);
}

TEST_CASE("truncated Gibbs keeps positivity and has the half-normal mean") {
  const TorusGrid g{3, 5, 0.0};
  const auto region = PositivityRegion::make(g, 0, 1);
  REQUIRE(region.sites.size() == 1);
  GibbsChain chain(free_field(), LatticeField(g), 21);
  const int n = 40000;
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    chain.truncated_sweep(region, SweepOrder::lexicographic, UpdateSet::region_only);
    const double v = chain.state()[region.sites[0]];
    CHECK(v >= 0.0);
    s += v;
  }
  const double half_normal = std::sqrt(2.0 / std::numbers::pi);  // G_L = 1 here
  CHECK(std::abs(s / n - half_normal) < 4.0 * std::sqrt(1.0 - 2.0 / std::numbers::pi) / std::sqrt(n));

  const TorusGrid big{3, 10, 0.05};
  const auto r2 = PositivityRegion::make(big, 2, 1);
  GibbsChain c2(free_field(), LatticeField::constant(big, 1.0), 3);
  for (int i = 0; i < 50; ++i) {
    c2.truncated_sweep(r2, SweepOrder::colored);
    CHECK(r2.min_over(c2.state().values()) >= 0.0);
  }
  LatticeField neg = LatticeField::constant(big, 1.0);
  neg[r2.sites[3]] = -0.1;
  CHECK_THROWS_AS(truncated_gibbs_sweep(free_field(), neg, r2, 1), Error);
  CHECK_THROWS_AS(PositivityRegion::make(TorusGrid{3, 8, 0.0}, 2, 1), Error);
}

TEST_CASE("Gibbs stationary covariance matches green_torus") {
  const TorusGrid g{3, 6, 0.5};
  GibbsChain chain(mixed(), LatticeField(g), 5);
  for (int i = 0; i < 200; ++i) chain.sweep();
  CovarianceAccumulator acc(g, canonical_displacements(3, 1.5));
  for (int i = 0; i < 8000; ++i) {
    chain.sweep();
    acc.add(chain.state());
  }
  const auto agree = compare_covariance(acc.estimate(40), green_torus(mixed(), g));
  CHECK(agree.max_abs_z < 4.0);
}
