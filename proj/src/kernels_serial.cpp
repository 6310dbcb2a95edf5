// Serial reference kernels: one site at a time, full coordinate decode.

#include "kernels_impl.hpp"

#include <vector>

namespace entrep::kernels::detail {
namespace {

std::size_t ipow(int base, int exp) {
  std::size_t r = 1;
  for (int i = 0; i < exp; ++i) r *= static_cast<std::size_t>(base);
  return r;
}

void decode(std::size_t site, int d, int L, std::vector<int>& x) {
  for (int i = d - 1; i >= 0; --i) {
    x[i] = static_cast<int>(site % static_cast<std::size_t>(L));
    site /= static_cast<std::size_t>(L);
  }
}

std::size_t encode(const std::vector<int>& x, int L) {
  std::size_t s = 0;
  for (int v : x) s = s * static_cast<std::size_t>(L) + static_cast<std::size_t>(v);
  return s;
}

} // namespace

void torus_stencil_serial(int d, int L, double center, double neighbor, std::span<const double> in,
                          std::span<double> out) {
  const std::size_t n = ipow(L, d);
  std::vector<int> x(d), y(d);
  for (std::size_t s = 0; s < n; ++s) {
    decode(s, d, L, x);
    double acc = 0.0;
    for (int a = 0; a < d; ++a) {
      y = x;
      y[a] = (x[a] + L - 1) % L;
      acc += in[encode(y, L)];
      y[a] = (x[a] + 1) % L;
      acc += in[encode(y, L)];
    }
    out[s] = center * in[s] + neighbor * acc;
  }
}

void box_stencil_serial(int d, int n, double center, double neighbor, std::span<const double> in,
                        std::span<double> out) {
  const std::size_t total = ipow(n, d);
  std::vector<int> x(d), y(d);
  for (std::size_t s = 0; s < total; ++s) {
    decode(s, d, n, x);
    double acc = 0.0;
    for (int a = 0; a < d; ++a) {
      y = x;
      if (x[a] > 0) {
        y[a] = x[a] - 1;
        acc += in[encode(y, n)];
      }
      if (x[a] + 1 < n) {
        y[a] = x[a] + 1;
        acc += in[encode(y, n)];
      }
    }
    out[s] = center * in[s] + neighbor * acc;
  }
}

void torus_forward_difference_serial(int d, int L, int axis, std::span<const double> in,
                                     std::span<double> out) {
  const std::size_t n = ipow(L, d);
  std::vector<int> x(d);
  for (std::size_t s = 0; s < n; ++s) {
    decode(s, d, L, x);
    x[axis] = (x[axis] + 1) % L;
    out[s] = in[encode(x, L)] - in[s];
  }
}

double dot_serial(std::span<const double> a, std::span<const double> b) {
  double total = 0.0;
  for (std::size_t start = 0; start < a.size(); start += kReductionBlock) {
    const std::size_t stop = std::min(a.size(), start + kReductionBlock);
    double partial = 0.0;
    for (std::size_t i = start; i < stop; ++i) partial += a[i] * b[i];
    total += partial;
  }
  return total;
}

} // namespace entrep::kernels::detail
