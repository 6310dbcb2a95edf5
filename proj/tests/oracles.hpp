#pragma once

// Independent reference computations used by the unit and acceptance tests.

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/bessel.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace oracle {

// e^{-z} I_nu(z), by Boost for moderate z and the Hankel expansion beyond.
inline double scaled_bessel_i(int nu, double z) {
  if (z < 600.0) return std::exp(-z) * boost::math::cyl_bessel_i(nu, z);
  const double mu = 4.0 * nu * nu;
  double term = 1.0, sum = 1.0;
  for (int k = 1; k < 60; ++k) {
    const double odd = 2.0 * k - 1.0;
    term *= -(mu - odd * odd) / (k * 8.0 * z);
    sum += term;
    if (std::abs(term) < 1e-17 * std::abs(sum)) break;
  }
  return sum / std::sqrt(2.0 * std::numbers::pi * z);
}

// Simple-random-walk Green's function on Z^d (the q(r) = r model):
//   G(0,x) = int_0^inf e^{-t} prod_i I_{x_i}(t/d) dt,
// from 1/lambda = int e^{-t lambda} dt and the Bessel generating function.
// The tail beyond T uses the leading Gaussian behaviour with its first
// correction, integrated in closed form. With eps > 0 the integrand carries
// e^{-eps t} (the massive operator eps + lambda) and the range is extended
// until that factor is negligible.
inline double srw_green(const std::vector<int>& x, double eps = 0.0) {
  const int d = static_cast<int>(x.size());
  auto f = [&](double t) {
    if (t == 0.0) {
      for (int v : x)
        if (v != 0) return 0.0;
      return 1.0;
    }
    double p = std::exp(-eps * t);
    for (int v : x) p *= scaled_bessel_i(std::abs(v), t / d);
    return p;
  };
  double r2 = 0.0;
  for (int v : x) r2 += static_cast<double>(v) * v;
  const double T = std::max({4000.0, 400.0 * r2, eps > 0.0 ? 45.0 / eps : 0.0});
  double total = 0.0;
  double a = 0.0;
  // geometric panels resolve the early peak and the slow tail alike
  double b = std::max(1.0, r2 / d / 4.0);
  while (a < T) {
    b = std::min(b, T);
    total += boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 8, 1e-14);
    a = b;
    b *= 1.6;
  }
  if (eps > 0.0) return total;
  // Tail: prod_i e^{-z}I_{x_i}(z) ~ (2 pi z)^{-d/2} (1 - c/z), z = t/d,
  // c = sum_i (4 x_i^2 - 1)/8.
  double c = 0.0;
  for (int v : x) c += (4.0 * v * v - 1.0) / 8.0;
  const double zT = T / d;
  const double amp = std::pow(2.0 * std::numbers::pi, -0.5 * d) * d;  // dt = d dz
  const double e = 0.5 * d;
  // int_{zT}^inf z^{-e} dz and z^{-e-1} dz
  total += amp * (std::pow(zT, 1.0 - e) / (e - 1.0) - c * std::pow(zT, -e) / e);
  return total;
}

} // namespace oracle
