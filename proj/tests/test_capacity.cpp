#include "entrep/capacity.hpp"
#include "entrep/error.hpp"

#include <doctest.h>
#include <json.hpp>

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace entrep;

namespace {

constexpr double kEta3 = 3.0 / (2.0 * std::numbers::pi);  // free field, d = 3

// Monte Carlo mean of |delta + x - y|^alpha over the unit cube pair, with its
// standard error.
std::pair<double, double> mc_pair_average(double alpha, const std::vector<int>& delta, int samples) {
  std::mt19937_64 gen(12345);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < samples; ++i) {
    double r2 = 0.0;
    for (int v : delta) {
      const double z = v + U(gen) - U(gen);
      r2 += z * z;
    }
    const double g = std::pow(r2, 0.5 * alpha);
    s += g;
    s2 += g * g;
  }
  const double mean = s / samples;
  return {mean, std::sqrt((s2 / samples - mean * mean) / samples)};
}

} // namespace

TEST_CASE("self cell average against closed forms and sampling") {
  CHECK(self_cell_average(2.0, 3) == doctest::Approx(0.5).epsilon(1e-12));  // E|x-y|^2 = d/6
  CHECK(self_cell_average(1.0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(self_cell_average(-0.5, 1) == doctest::Approx(8.0 / 3.0).epsilon(1e-8));
  const auto [mc, se] = mc_pair_average(-1.0, {0, 0, 0}, 2000000);
  CHECK(std::abs(self_cell_average(-1.0, 3) - mc) < 4 * se);
  const auto [mc5, se5] = mc_pair_average(-1.0, {0, 0, 0, 0, 0}, 1000000);
  CHECK(std::abs(self_cell_average(-1.0, 5) - mc5) < 4 * se5);
  CHECK_THROWS_AS(self_cell_average(-3.0, 3), Error);
}

TEST_CASE("cell pair averages against sampling") {
  for (const std::vector<int>& delta : {std::vector<int>{1, 0, 0}, {1, 1, 1}, {2, 1, 0}}) {
    const auto [mc, se] = mc_pair_average(-1.0, delta, 1000000);
    CHECK(std::abs(cell_pair_average(-1.0, delta) - mc) < 4 * se);
  }
  const std::vector<int> zero{0, 0, 0};
  CHECK(cell_pair_average(-1.0, zero) == doctest::Approx(self_cell_average(-1.0, 3)).epsilon(1e-10));
  const std::vector<int> a{1, 0, -1}, b{0, -1, 1};
  CHECK(cell_pair_average(-1.0, a) == cell_pair_average(-1.0, b));
}

TEST_CASE("kernel matrix structure and scaling") {
  const auto K = kernel_matrix(1, 3, kEta3, 1.0, 5);
  const std::size_t n = K.cells();
  REQUIRE(n == 125);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) REQUIRE(K.matrix[i * n + j] == K.matrix[j * n + i]);
  const auto K3 = kernel_matrix(1, 3, 3.0 * kEta3, 1.0, 5);
  for (std::size_t i = 0; i < n * n; i += 97) CHECK(K3.matrix[i] == doctest::Approx(3.0 * K.matrix[i]).epsilon(1e-14));
  const auto Kq = kernel_matrix(1, 3, kEta3, 2.0, 5);
  CHECK(Kq.matrix[7] == doctest::Approx(0.5 * K.matrix[7]).epsilon(1e-14));
  CHECK_THROWS_AS(kernel_matrix(2, 4, 1.0, 1.0, 4), Error);
  CHECK_THROWS_AS(kernel_matrix(1, 3, -1.0, 1.0, 4), Error);
}

TEST_CASE("kernel applied to a constant at the centre matches the cube potential") {
  // int_{[0,1]^3} dy / |y| = 3 ln(1 + sqrt 3) - (3/2) ln 2 - pi/4.
  const double octant = 3.0 * std::log(1.0 + std::sqrt(3.0)) - 1.5 * std::log(2.0) - std::numbers::pi / 4.0;
  const double exact = kEta3 * 8.0 * octant;
  const int n = 15;
  const auto K = kernel_matrix(1, 3, kEta3, 1.0, n);
  const std::vector<double> one(K.cells(), 1.0);
  const auto Kf = K.apply(one);
  const std::size_t center = (n / 2) * n * n + (n / 2) * n + n / 2;
  CHECK(std::abs(Kf[center] - exact) / exact < 0.01);
}

TEST_CASE("dual functionals and the eigen sum") {
  const auto K = kernel_matrix(1, 3, kEta3, 1.0, 6);
  const auto eig = eigen_capacity(K);
  const auto fstar = dual_optimizer(K);
  const auto at_opt = dual_values(K, fstar);
  CHECK(std::abs(eig.value - at_opt.linear) / eig.value < 1e-8);
  CHECK(std::abs(at_opt.rayleigh - at_opt.linear) / eig.value < 1e-8);

  // sum of weights = <1,1> = |V|
  double wsum = 0.0;
  for (double w : eig.weights) wsum += w;
  CHECK(wsum == doctest::Approx(8.0).epsilon(1e-10));
  for (std::size_t i = 1; i < eig.eigenvalues.size(); ++i) REQUIRE(eig.eigenvalues[i] >= eig.eigenvalues[i - 1]);

  std::mt19937_64 gen(7);
  std::normal_distribution<double> N(0.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> f(K.cells());
    for (double& v : f) v = N(gen) + (t % 2 ? 1.0 : 0.0);
    const auto dv = dual_values(K, f);
    REQUIRE(eig.value >= dv.rayleigh * (1.0 - 1e-12));
    REQUIRE(dv.rayleigh >= dv.linear - 1e-12 * std::abs(dv.linear));
  }

  // f = t 1_V: the linear form peaks at t* = <1,1>/<1,K1> with the rayleigh value.
  std::vector<double> one(K.cells(), 1.0);
  const auto base = dual_values(K, one);
  const double K11 = 8.0 * 8.0 / base.rayleigh;
  std::vector<double> scaled(K.cells(), 8.0 / K11);
  CHECK(dual_values(K, scaled).linear == doctest::Approx(base.rayleigh).epsilon(1e-12));

  const std::vector<double> zero(K.cells(), 0.0);
  CHECK_THROWS_AS(dual_values(K, zero), Error);
}

TEST_CASE("eigen sum increases under refinement") {
  double prev = 0.0;
  for (int n : {2, 4, 8}) {
    const double v = eigen_capacity(kernel_matrix(1, 3, kEta3, 1.0, n)).value;
    CHECK(v > prev);
    prev = v;
  }
  CHECK_THROWS_AS(eigen_capacity(kernel_matrix(1, 3, kEta3, 1.0, 8), 1 << 20), Error);
}

TEST_CASE("inverse identity picks q_k/(2d)^k") {
  const QPolynomial q(1, {1.0});
  const auto r = verify_inverse_identity(q, 3, 32, kEta3);
  REQUIRE(r.candidates.size() == 4);
  CHECK(r.candidates[r.best].name == "q_k/(2d)^k");
  CHECK(r.candidates[r.best].residual < 0.02);

  const auto zero = verify_inverse_identity(q, 3, 16, kEta3, 0.8, 0.0);
  CHECK(zero.rhs == 0.0);
  CHECK(zero.raw == 0.0);
  const auto one = verify_inverse_identity(q, 3, 16, kEta3, 0.8, 1.0);
  const auto two = verify_inverse_identity(q, 3, 16, kEta3, 0.8, 2.0);
  CHECK(two.raw == doctest::Approx(2.0 * one.raw).epsilon(1e-12));
  CHECK(two.rhs == doctest::Approx(2.0 * one.rhs).epsilon(1e-12));

  // eta is scale free in q, so the same eta serves q = 3r.
  const auto r3 = verify_inverse_identity(QPolynomial(1, {3.0}), 3, 16, kEta3);
  CHECK(r3.candidates[r3.best].name == "q_k/(2d)^k");
}

TEST_CASE("obstacle problem validation") {
  CHECK_THROWS_AS((ObstacleProblem{1, 3, 0.5, 1.5, 1.0}.validate()), Error);  // R <= sqrt(3)
  CHECK_THROWS_AS((ObstacleProblem{1, 3, 0.3, 3.0, 1.0}.validate()), Error);  // h does not divide 2
  CHECK_THROWS_AS((ObstacleProblem{2, 4, 0.5, 3.0, 1.0}.validate()), Error);  // d < 2k+1
  CHECK_NOTHROW((ObstacleProblem{1, 3, 0.5, 2.5, 1.0}.validate()));
}

TEST_CASE("obstacle solve matches a dense active-set solve") {
  // Dense oracle: u = 1 on V, (-Delta_h) u = 0 on the other free nodes.
  const ObstacleProblem p{1, 3, 0.5, 2.0, 1.0};
  const auto sol = solve_obstacle(p, {1e-10, 200000});
  REQUIRE(sol.converged);

  const double h = p.h_step;
  const int M = sol.M;
  std::vector<std::array<int, 3>> nodes;
  std::vector<int> is_obstacle;
  for (int a = -M; a <= M; ++a)
    for (int b = -M; b <= M; ++b)
      for (int c = -M; c <= M; ++c)
        if (std::sqrt(double(a * a + b * b + c * c)) * h < p.R) {
          nodes.push_back({a, b, c});
          is_obstacle.push_back(std::max({std::abs(a), std::abs(b), std::abs(c)}) * h <= 1.0 ? 1 : 0);
        }
  const int n = static_cast<int>(nodes.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    A(i, i) = 6.0 / (h * h);
    for (int j = 0; j < n; ++j) {
      const int l1 = std::abs(nodes[i][0] - nodes[j][0]) + std::abs(nodes[i][1] - nodes[j][1]) +
                     std::abs(nodes[i][2] - nodes[j][2]);
      if (l1 == 1) A(i, j) = -1.0 / (h * h);
    }
  }
  std::vector<int> fr, ob;
  for (int i = 0; i < n; ++i) (is_obstacle[i] ? ob : fr).push_back(i);
  Eigen::MatrixXd Aff(fr.size(), fr.size());
  Eigen::VectorXd rhs(fr.size());
  for (std::size_t i = 0; i < fr.size(); ++i) {
    for (std::size_t j = 0; j < fr.size(); ++j) Aff(i, j) = A(fr[i], fr[j]);
    double s = 0.0;
    for (int o : ob) s += A(fr[i], o);
    rhs(i) = -s;
  }
  const Eigen::VectorXd uf = Aff.llt().solve(rhs);
  Eigen::VectorXd u = Eigen::VectorXd::Ones(n);
  for (std::size_t i = 0; i < fr.size(); ++i) u(fr[i]) = uf(i);
  const double value = std::pow(h, 3) / 6.0 * u.dot(A * u);
  CHECK(sol.value == doctest::Approx(value).epsilon(1e-8));
  const Eigen::VectorXd mult = A * u;
  for (int o : ob) CHECK(mult(o) >= -1e-12);  // multipliers of u >= 1 are non-negative
  for (int i = 0; i < n; ++i)
    REQUIRE(std::abs(sol.at(std::array<int, 3>{nodes[i][0], nodes[i][1], nodes[i][2]}) - u(i)) < 1e-7);
}

TEST_CASE("obstacle minimiser: contact, KKT, symmetry, monotonicity") {
  const ObstacleProblem p{1, 3, 0.25, 3.0, 1.0};
  const auto s = solve_obstacle(p);
  REQUIRE(s.converged);
  CHECK(s.kkt.feasibility == 0.0);
  CHECK(s.kkt.contact_deviation < 1e-12);
  CHECK(s.kkt.stationarity < 1e-5);
  CHECK(s.kkt.complementarity < 1e-6);
  CHECK(s.kkt.dual_sign == 0.0);
  CHECK(s.symmetry_defect < 1e-6);
  const std::array<int, 3> far{s.M, 0, 0};
  CHECK(s.at(far) == 0.0);

  // Sub-box capacity is smaller.
  const auto sub = solve_obstacle(ObstacleProblem{1, 3, 0.25, 3.0, 0.5});
  CHECK(sub.value < s.value);

  // Coarser grid gives a larger value; a warm start reaches the same minimum.
  const auto coarse = solve_obstacle(ObstacleProblem{1, 3, 0.5, 3.0, 1.0});
  CHECK(coarse.value > s.value);
  const auto warm = solve_obstacle(p, {}, &coarse);
  CHECK(warm.value == doctest::Approx(s.value).epsilon(1e-8));
  CHECK(warm.converged);

  // Inside the ball sandwich radius-wise: value decreases in R.
  const auto wide = solve_obstacle(ObstacleProblem{1, 3, 0.25, 4.0, 1.0});
  CHECK(wide.value < s.value);

  std::ostringstream csv;
  write_minimizer_csv(csv, s);
  CHECK(csv.str().rfind("# k=1 d=3", 0) == 0);
}

TEST_CASE("obstacle k=2 in d=5 satisfies KKT") {
  const auto s = solve_obstacle(ObstacleProblem{2, 5, 0.5, 2.5, 1.0});
  REQUIRE(s.converged);
  CHECK(s.kkt.feasibility == 0.0);
  CHECK(s.kkt.stationarity < 1e-5);
  CHECK(s.kkt.complementarity < 1e-6);
  CHECK(s.kkt.dual_sign < 1e-6);
  CHECK(s.symmetry_defect < 1e-6);
  CHECK(s.value > 0.0);
}

TEST_CASE("capacity extrapolation") {
  // v(h) = 2.5 + 0.4 h^1.5 at R = 6; 1/v(R) = 1/2.5 - 0.9/R at the finest h.
  const auto v = [](double h) { return 2.5 + 0.4 * std::pow(h, 1.5); };
  std::vector<CapacitySample> hs{{0.25, 6.0, v(0.25)}, {1.0 / 6, 6.0, v(1.0 / 6)}, {0.125, 6.0, v(0.125)}};
  const double finest = v(0.125);
  const auto rv = [](double R) { return 1.0 / (1.0 / 2.9 - 0.9 / R); };
  std::vector<CapacitySample> Rs{{0.125, 4.0, rv(4.0)}, {0.125, 6.0, rv(6.0)}, {0.125, 8.0, rv(8.0)}};
  const auto e = extrapolate_capacity(1, 3, hs, Rs);
  REQUIRE_FALSE(e.refused);
  CHECK(e.order == doctest::Approx(1.5).epsilon(1e-8));
  CHECK(e.h_limit == doctest::Approx(2.5).epsilon(1e-10));
  CHECK(e.R_limit_reciprocal == doctest::Approx(2.9).epsilon(1e-10));
  CHECK(e.R_limit_additive < e.R_limit_reciprocal);
  CHECK(e.value == doctest::Approx(2.9 * 2.5 / finest).epsilon(1e-10));

  const auto again = extrapolate_capacity(1, 3, hs, Rs);
  CHECK(again.value == e.value);
  CHECK(again.error == e.error);

  const auto add = extrapolate_capacity(1, 3, hs, Rs, RadiusFit::additive);
  CHECK(add.R_correction < e.R_correction);

  auto bad = hs;
  bad[1].value = bad[2].value - 0.01;
  const auto r = extrapolate_capacity(1, 3, bad, Rs);
  CHECK(r.refused);
  CHECK(r.raw.size() == 6);
  CHECK(extrapolate_capacity(1, 3, {hs[0], hs[1]}, Rs).refused);

  std::ostringstream js;
  write_extrapolation_json(js, 1, 3, e);
  const auto j = nlohmann::json::parse(js.str());
  CHECK(j["schema_version"] == 1);
  CHECK(j["R_fit"] == "reciprocal");
}

TEST_CASE("capacity result JSON and spectrum CSV") {
  CapacityResult r;
  r.problem = ObstacleProblem{1, 3, 0.25, 4.0, 1.0};
  r.primal = 3.0;
  r.eigen_sum = 2.8;
  std::ostringstream os;
  write_capacity_json(os, r);
  const auto j = nlohmann::json::parse(os.str());
  CHECK(j["kind"] == "capacity");
  CHECK(j["h_step"] == 0.25);
  CHECK(j["primal"] == 3.0);

  const auto eig = eigen_capacity(kernel_matrix(1, 3, kEta3, 1.0, 2));
  std::ostringstream csv;
  write_spectrum_csv(csv, eig);
  CHECK(csv.str().find("index,eigenvalue,weight") != std::string::npos);
}

TEST_CASE("capacity study matches direct calls") {
  CapacityStudySpec spec;
  spec.inverse_steps = {2, 4};
  spec.radii = {2.0, 3.0};
  spec.kernel_resolutions = {4};
  spec.eta = 3.0 / (2.0 * std::numbers::pi);
  const auto st = capacity_study(spec);
  REQUIRE(st.solutions.size() == 4);
  CHECK(st.extrapolation.refused);
  const auto direct = solve_obstacle(ObstacleProblem{1, 3, 0.5, 3.0, 1.0});
  CHECK(st.solutions[1].value == doctest::Approx(direct.value).epsilon(1e-7));
  REQUIRE(st.results.size() == 1);
  const auto& r = st.results[0];
  CHECK(r.problem.h_step == 0.5);
  CHECK(r.primal_raw == doctest::Approx(direct.value).epsilon(1e-7));
  const double v2 = solve_obstacle(ObstacleProblem{1, 3, 0.5, 2.0, 1.0}).value;
  // Reciprocal fit through two points: 1/v = c0 + c1/R.
  const double x2 = 0.5, x3 = 1.0 / 3.0;
  const double c0 = (x2 / direct.value - x3 / v2) / (x2 - x3);
  CHECK(r.primal == doctest::Approx(1.0 / c0).epsilon(1e-6));
  const auto K = kernel_matrix(1, 3, spec.eta, 1.0, 4);
  CHECK(r.eigen_sum == doctest::Approx(eigen_capacity(K).value).epsilon(1e-12));
  CHECK(r.gap == doctest::Approx(std::abs(r.primal - r.dual_capacity) / r.primal));

  spec.kernel_resolutions = {6};
  CHECK_THROWS_AS(capacity_study(spec), Error);

  std::ostringstream a, b;
  write_capacity_csv(a, st, "cmd=capacity");
  write_capacity_samples_csv(b, st);
  CHECK(a.str().rfind("# cmd=capacity\n# k=1 d=3", 0) == 0);
  CHECK(a.str().find("# extrapolation refused:") != std::string::npos);
  CHECK(b.str().rfind("h,R,value,iterations", 0) == 0);
}
