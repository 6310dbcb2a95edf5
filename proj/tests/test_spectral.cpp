#include "entrep/error.hpp"
#include "entrep/spectral.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

using namespace entrep;

namespace {
QPolynomial free_field() { return QPolynomial(1, {1.0}); }
QPolynomial membrane() { return QPolynomial(2, {1.0}); }
} // namespace

TEST_CASE("symbol examples") {
  std::vector<double> zero{0.0, 0.0, 0.0};
  std::vector<double> corner{std::numbers::pi, std::numbers::pi, std::numbers::pi};
  std::vector<double> half{std::numbers::pi / 2, 0.0, 0.0};
  CHECK(symbol_value(free_field(), 0.0, zero) == 0.0);
  CHECK(symbol_value(membrane(), 0.0, corner) == doctest::Approx(4.0));
  CHECK(symbol_value(free_field(), 0.0, half) == doctest::Approx(1.0 / 3.0));

  TorusGrid g{3, 6, 0.1};
  auto s = SymbolGrid::build(QPolynomial(1, {1.0, 0.5}), g);
  for (std::size_t i = 0; i < g.sites(); ++i) {
    auto m = g.coords(i);
    for (int& v : m) v = -v;
    CHECK(s.values()[i] == s.at(m));
    CHECK(s.values()[i] > 0.0);
  }
}

TEST_CASE("green_torus inverts J and is cubic-symmetric") {
  TorusGrid g{3, 12, 0.05};
  for (const auto& q : {free_field(), membrane(), QPolynomial(1, {1.0, 0.5})}) {
    const auto t = green_torus(q, g);
    const auto spike = j_apply(q, g.eps, t.as_field());
    double err = 0.0;
    for (std::size_t i = 0; i < g.sites(); ++i) err = std::max(err, std::abs(spike[i] - (i == 0 ? 1.0 : 0.0)));
    CHECK(err < 1e-8);
    CHECK(cubic_symmetry_defect(t) < 1e-12);
    CHECK(t.origin() > 0.0);
    CHECK(t.imag_residue() < 1e-10);
  }
  CHECK_THROWS_AS(green_torus(free_field(), TorusGrid{3, 8, 0.0}), Error);
}

TEST_CASE("richardson removes the modelled error terms exactly") {
  const std::vector<double> h{1.0 / 16, 1.0 / 24, 1.0 / 36};
  const std::vector<double> p{1.0, 3.0};
  std::vector<double> v;
  for (double s : h) v.push_back(2.0 + 0.7 * s - 5.0 * s * s * s);
  CHECK(richardson(h, v, p) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("green_infinite free field at the origin") {
  const std::vector<int> o{0, 0, 0};
  const auto r = green_infinite(free_field(), 3, o, QuadratureSpec{64, 4, 1.5, 1e-6});
  CHECK(r.value == doctest::Approx(1.516386059151978).epsilon(2e-6));
  CHECK(r.converged);
  CHECK(r.error_estimate < 1e-4);
}

TEST_CASE("green_infinite matches the Bessel-integral oracle") {
  const std::vector<std::vector<int>> xs{{0, 0, 0}, {1, 0, 0}, {2, 1, 0}, {2, 2, 2}, {3, 1, 1}, {0, 4, 0}};
  const auto rs = green_infinite_many(free_field(), 3, xs, QuadratureSpec{64, 4, 1.5, 1e-6});
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double ref = oracle::srw_green(xs[i]);
    CHECK(rs[i].value == doctest::Approx(ref).epsilon(1e-5));
  }
  CHECK(oracle::srw_green({0, 0, 0}) == doctest::Approx(1.516386059151978).epsilon(1e-8));
  // x and -x agree
  const std::vector<int> a{2, -1, 0}, b{-2, 1, 0};
  CHECK(green_infinite(free_field(), 3, a).value == green_infinite(free_field(), 3, b).value);
}

TEST_CASE("green_infinite membrane in d=5 is finite and stable") {
  const std::vector<int> o(5, 0);
  const auto r = green_infinite(membrane(), 5, o, QuadratureSpec{24, 3, 1.5, 1e-3});
  CHECK(r.value > 0.0);
  CHECK(std::isfinite(r.value));
  const auto n = r.level_values.size();
  // the two finest raw levels already agree to about 3 significant digits
  CHECK(std::abs(r.level_values[n - 1] - r.value) / r.value < 2e-2);
  CHECK(r.error_estimate / r.value < 1e-3);
  CHECK_THROWS_AS(green_infinite(membrane(), 4, std::vector<int>(4, 0)), Error);
}

TEST_CASE("torus Green function equals the image sum of the massive lattice one") {
  // G_torus(0) = sum_n G_eps(L n); the mass makes images beyond the first
  // shell negligible (< 1e-6 here).
  TorusGrid g{3, 64, 1e-3};
  const auto t = green_torus(free_field(), g);
  double images = 0.0;
  for (int a = -1; a <= 1; ++a)
    for (int b = -1; b <= 1; ++b)
      for (int c = -1; c <= 1; ++c) images += oracle::srw_green({a * g.L, b * g.L, c * g.L}, g.eps);
  CHECK(t.origin() == doctest::Approx(images).epsilon(1e-5));
  // the mass lowers G(0,0) below 1.5164 by about 1.17 sqrt(eps)
  CHECK(t.origin() == doctest::Approx(1.516386 - 1.17 * std::sqrt(g.eps)).epsilon(3e-3));
}

TEST_CASE("spectral sampler is deterministic and has the right zero mode") {
  const TorusGrid g{3, 8, 0.2};
  SpectralSampler s(free_field(), g);
  const auto a = s.draw(11, 0);
  const auto b = s.draw(11, 0);
  CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
  const auto c = spectral_sample(g, free_field(), 11);
  CHECK(std::equal(a.values().begin(), a.values().end(), c.values().begin()));

  const int n = 10000;
  double s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto f = s.draw(5, static_cast<std::uint64_t>(i));
    double m = 0.0;
    for (double v : f.values()) m += v;
    m /= static_cast<double>(g.sites());
    s2 += m * m;
  }
  const double expected = 1.0 / (static_cast<double>(g.sites()) * eval_q(free_field(), g.eps));
  CHECK(std::abs(s2 / n - expected) < 4.0 * expected * std::sqrt(2.0 / n));
}

TEST_CASE("empirical covariance of spectral samples matches green_torus") {
  const TorusGrid g{3, 8, 0.3};
  const auto q = QPolynomial(1, {1.0, 0.5});
  SpectralSampler s(q, g);
  const auto disp = canonical_displacements(3, 2.0);
  CovarianceAccumulator acc(g, disp);
  for (int i = 0; i < 4000; ++i) acc.add(s.draw(3, static_cast<std::uint64_t>(i)));
  const auto est = acc.estimate(40);
  const auto agree = compare_covariance(est, green_torus(q, g));
  CHECK(agree.max_abs_z < 4.0);
  CHECK(agree.p_value > 1e-3);
}

TEST_CASE("empirical covariance trivial cases") {
  const TorusGrid g{2, 8, 0.0};
  std::vector<LatticeField> zeros(3, LatticeField(g));
  for (const auto& e : empirical_covariance(zeros, {{0, 0}, {1, 0}})) {
    CHECK(e.value == 0.0);
    CHECK(e.std_error == 0.0);
  }
  // phi_x = cos(2 pi x_1 / L): translation average of phi_y phi_{y+x} is cos(2 pi x_1 / L)/2
  LatticeField f(g);
  for (std::size_t i = 0; i < g.sites(); ++i) f[i] = std::cos(2.0 * std::numbers::pi * g.coords(i)[0] / g.L);
  std::vector<LatticeField> same{f, f};
  const auto est = empirical_covariance(same, {{0, 0}, {1, 0}, {2, 3}});
  CHECK(est[0].value == doctest::Approx(0.5));
  CHECK(est[1].value == doctest::Approx(0.5 * std::cos(2.0 * std::numbers::pi / 8)));
  CHECK(est[2].value == doctest::Approx(0.0).epsilon(1e-14));
  CHECK_THROWS_AS(empirical_covariance(std::vector<LatticeField>{f}, {{0, 0}}), Error);
}

TEST_CASE("canonical displacements and CSV export") {
  const auto c = canonical_displacements(3, std::sqrt(2.0));
  CHECK(c == std::vector<std::vector<int>>{{0, 0, 0}, {0, 0, 1}, {0, 1, 1}});
  std::ostringstream os;
  write_green_csv(os, green_torus(free_field(), TorusGrid{2, 4, 0.5}));
  CHECK(os.str().rfind("# d=2 L=4 eps=0.5 q=1", 0) == 0);
}

TEST_CASE("decay constant of the free field") {
  const auto r = decay_constant(free_field(), 3, 10, 20, QuadratureSpec{64, 4, 1.5, 1e-6});
  const double classical = 3.0 / (2.0 * std::numbers::pi);
  CHECK(r.eta == doctest::Approx(classical).epsilon(0.05));
  CHECK(r.ratio_variation(10, 20) < 0.02);
  CHECK(std::abs(r.eta_axis - r.eta_diagonal) / r.eta < 3e-3);
  // with the 1/|x|^2 correction of the lattice Green function the two
  // directions agree within their fit errors
  const auto r2 = decay_constant(free_field(), 3, 15, 30, QuadratureSpec{64, 4, 1.5, 1e-6}, 2);
  CHECK(std::abs(r2.eta_axis - r2.eta_diagonal) <= r2.eta_axis_error + r2.eta_diagonal_error + 1e-6);
  CHECK(r2.eta == doctest::Approx(classical).epsilon(1e-4));
  for (const auto& row : r.rows) CHECK(row.ratio > 0.0);
  CHECK_THROWS_AS(decay_constant(free_field(), 3, 10, 15), Error);
  std::ostringstream os;
  write_decay_csv(os, free_field(), 3, r);
  CHECK(os.str().find("direction,radius,x1,x2,x3,G,G_error,ratio") != std::string::npos);
}
