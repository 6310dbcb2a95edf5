#include "entrep/error.hpp"
#include "entrep/lattice.hpp"
#include "entrep/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace entrep;

namespace {

QPolynomial free_field() { return QPolynomial(1, {1.0}); }
QPolynomial membrane() { return QPolynomial(2, {1.0}); }
QPolynomial mixed() { return QPolynomial(1, {1.0, 0.5}); }

LatticeField random_field(const TorusGrid& g, std::mt19937_64& gen) {
  std::normal_distribution<double> n;
  LatticeField f(g);
  for (auto& v : f.values()) v = n(gen);
  return f;
}

} // namespace

TEST_CASE("eval_q examples") {
  CHECK(eval_q(free_field(), 1.0) == 1.0);
  CHECK(eval_q(membrane(), 2.0) == 4.0);
  CHECK(eval_q(mixed(), 2.0) == 4.0);
  CHECK(mixed().K() == 2);
  CHECK(QPolynomial::from_coefficients({0.0, 3.0, 0.0}) == QPolynomial(2, {3.0}));
  CHECK_THROWS_AS(QPolynomial(1, {0.0, 1.0}), Error);
  CHECK_THROWS_AS(QPolynomial(1, {1.0, 0.0}), Error);
  CHECK_THROWS_AS(QPolynomial(0, {1.0}), Error);
}

TEST_CASE("validate_model") {
  CHECK(validate_model({free_field(), 3}).passed());
  CHECK(validate_model({membrane(), 5}).passed());

  auto low_d = validate_model({membrane(), 4});
  REQUIRE(!low_d.passed());
  CHECK(low_d.first_failure()->name == "a");

  // q(r) = r - 0.6 r^2 is negative beyond r = 5/3.
  auto neg = validate_model({QPolynomial(1, {1.0, -0.6}), 3});
  REQUIRE(!neg.passed());
  CHECK(neg.first_failure()->name == "b");
  CHECK(*neg.first_failure()->witness == doctest::Approx(5.0 / 3.0).epsilon(1e-9));

  // A dip of width 2e-7 around r = 1, far narrower than the scan spacing.
  const double tiny = 1e-14;
  auto dip = validate_model({QPolynomial(1, {1.0 - tiny, -2.0, 1.0}), 3});
  REQUIRE(!dip.passed());
  CHECK(std::abs(*dip.first_failure()->witness - 1.0) < 1e-6);
}

TEST_CASE("real_roots_in") {
  // (r - 0.5)(r - 1.5) = r^2 - 2 r + 0.75
  auto r = real_roots_in({0.75, -2.0, 1.0}, 0.0, 2.0);
  REQUIRE(r.size() == 2);
  CHECK(r[0] == doctest::Approx(0.5));
  CHECK(r[1] == doctest::Approx(1.5));
  CHECK(real_roots_in({1.0, 0.0, 1.0}, -5.0, 5.0).empty());
}

TEST_CASE("grid indexing and displacement reduction") {
  TorusGrid g{3, 5, 0.0};
  CHECK(g.sites() == 125);
  std::vector<int> x{1, 4, 2};
  CHECK(g.coords(g.index(x)) == x);
  std::vector<int> w{-1, 9, 2};
  CHECK(g.index(w) == g.index(std::vector<int>{4, 4, 2}));
  std::vector<int> y{3, -3, 5};
  CHECK(reduce_displacement(y, 6) == std::vector<int>{3, 3, -1});
  CHECK_THROWS_AS(require_range_fits(TorusGrid{3, 4, 0.0}, mixed()), Error);
  CHECK_NOTHROW(require_range_fits(TorusGrid{3, 5, 0.0}, mixed()));
}

TEST_CASE("laplacian of constant and spike") {
  TorusGrid g{3, 6, 0.0};
  auto c = laplacian_apply(LatticeField::constant(g, 2.5));
  for (double v : c.values()) CHECK(std::abs(v) < 1e-15);
  std::vector<int> o{0, 0, 0};
  auto s = laplacian_apply(LatticeField::spike(g, o));
  CHECK(s.at(o) == doctest::Approx(-1.0));
  CHECK(s.at(std::vector<int>{1, 0, 0}) == doctest::Approx(1.0 / 6.0));
  CHECK(s.at(std::vector<int>{0, -1, 0}) == doctest::Approx(1.0 / 6.0));
  CHECK_THROWS_AS(gradient_apply(LatticeField(g), 0), Error);
  CHECK_THROWS_AS(gradient_apply(LatticeField(g), 4), Error);
}

TEST_CASE("j_apply acts on Fourier modes by the symbol") {
  TorusGrid g{3, 8, 0.05};
  for (const auto& q : {free_field(), membrane(), mixed()}) {
    const std::vector<int> m{1, 3, 6};
    LatticeField f(g);
    for (std::size_t i = 0; i < g.sites(); ++i) {
      const auto x = g.coords(i);
      double ph = 0.0;
      for (int a = 0; a < 3; ++a) ph += 2.0 * std::numbers::pi * m[a] * x[a] / g.L;
      f[i] = std::cos(ph);
    }
    double lambda = 1.0;
    for (int a = 0; a < 3; ++a) lambda -= std::cos(2.0 * std::numbers::pi * m[a] / g.L) / 3.0;
    const double sym = eval_q(q, g.eps + lambda);
    const auto jf = j_apply(q, g.eps, f);
    double err = 0.0;
    for (std::size_t i = 0; i < g.sites(); ++i) err = std::max(err, std::abs(jf[i] - sym * f[i]));
    CHECK(err < 1e-12);
  }
  CHECK_THROWS_AS(j_apply(free_field(), -1.0, LatticeField(g)), Error);
}

TEST_CASE("Hamiltonian equals the quadratic form of J") {
  std::mt19937_64 gen(7);
  TorusGrid g{3, 6, 0.0};
  for (const auto& q : {free_field(), membrane(), mixed(), QPolynomial(1, {0.3, 0.2, 1.1})}) {
    for (int t = 0; t < 20; ++t) {
      const auto f = random_field(g, gen);
      const double h = hamiltonian_energy(q, f);
      const double form = inner(f, j_apply(q, 0.0, f));
      CHECK(std::abs(h - form) <= 1e-10 * std::abs(form));
    }
  }
}

TEST_CASE("Hamiltonian of a d=1 free-field spike") {
  // grad phi = (1,-1,0,0) on Z_4: sum of squares 2, normalised by 2d = 2.
  TorusGrid g{1, 4, 0.0};
  LatticeField f(g, {0.0, 1.0, 0.0, 0.0});
  CHECK(hamiltonian_energy(free_field(), f) == doctest::Approx(1.0));
}

TEST_CASE("Philox known-answer vectors") {
  // Random123 kat_vectors: philox4x32_10.
  auto z = philox4x32_10({0, 0, 0, 0}, {0, 0});
  CHECK(z == PhiloxCounter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  auto f = philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
  CHECK(f == PhiloxCounter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  auto p = philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
  CHECK(p == PhiloxCounter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("random streams are reproducible and distinct") {
  RandomStream a(42, "spectral", 3), b(42, "spectral", 3), c(42, "spectral", 4), e(42, "gibbs", 3);
  for (int i = 0; i < 10; ++i) {
    const auto va = a();
    CHECK(va == b());
    CHECK(va != c());
    CHECK(va != e());
  }
  RandomStream r(1, "x", 0);
  CHECK(r.block_at(5) == RandomStream(1, "x", 0).block_at(5));
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / n) < 5.0 / std::sqrt(n));
  CHECK(std::abs(s2 / n - 1.0) < 5.0 * std::sqrt(2.0 / n));
}
