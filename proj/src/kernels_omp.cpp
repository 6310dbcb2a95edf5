// OpenMP kernels: parallel over rows of the last axis, neighbour rows
// resolved once per row.

#include "kernels_impl.hpp"

#include <omp.h>

#include <vector>

namespace entrep::kernels::detail {
namespace {

std::size_t ipow(int base, int exp) {
  std::size_t r = 1;
  for (int i = 0; i < exp; ++i) r *= static_cast<std::size_t>(base);
  return r;
}

// Coordinates of the outer (first d-1) axes of `row`.
void decode_row(std::size_t row, int outer, int L, int* x) {
  for (int i = outer - 1; i >= 0; --i) {
    x[i] = static_cast<int>(row % static_cast<std::size_t>(L));
    row /= static_cast<std::size_t>(L);
  }
}

} // namespace

void torus_stencil_omp(int d, int L, double center, double neighbor, std::span<const double> in,
                       std::span<double> out) {
  const int outer = d - 1;
  const auto rows = static_cast<std::ptrdiff_t>(ipow(L, outer));
  std::vector<std::size_t> stride(outer > 0 ? outer : 1);
  for (int a = 0; a < outer; ++a) stride[a] = ipow(L, outer - 1 - a);
  const double* src = in.data();
  double* dst = out.data();

#pragma omp parallel
  {
    std::vector<int> x(outer > 0 ? outer : 1);
    std::vector<std::size_t> minus(outer > 0 ? outer : 1), plus(outer > 0 ? outer : 1);
#pragma omp for schedule(static)
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
      const auto row = static_cast<std::size_t>(r);
      decode_row(row, outer, L, x.data());
      for (int a = 0; a < outer; ++a) {
        const std::size_t down = x[a] == 0 ? row + (L - 1) * stride[a] : row - stride[a];
        const std::size_t up = x[a] == L - 1 ? row - (L - 1) * stride[a] : row + stride[a];
        minus[a] = down * L;
        plus[a] = up * L;
      }
      const std::size_t base = row * L;
      for (int j = 0; j < L; ++j) {
        double acc = 0.0;
        for (int a = 0; a < outer; ++a) {
          acc += src[minus[a] + j];
          acc += src[plus[a] + j];
        }
        acc += src[base + (j == 0 ? L - 1 : j - 1)];
        acc += src[base + (j == L - 1 ? 0 : j + 1)];
        dst[base + j] = center * src[base + j] + neighbor * acc;
      }
    }
  }
}

void box_stencil_omp(int d, int n, double center, double neighbor, std::span<const double> in,
                     std::span<double> out) {
  const int outer = d - 1;
  const auto rows = static_cast<std::ptrdiff_t>(ipow(n, outer));
  std::vector<std::size_t> stride(outer > 0 ? outer : 1);
  for (int a = 0; a < outer; ++a) stride[a] = ipow(n, outer - 1 - a);
  const double* src = in.data();
  double* dst = out.data();

#pragma omp parallel
  {
    std::vector<int> x(outer > 0 ? outer : 1);
#pragma omp for schedule(static)
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
      const auto row = static_cast<std::size_t>(r);
      decode_row(row, outer, n, x.data());
      const std::size_t base = row * n;
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int a = 0; a < outer; ++a) {
          if (x[a] > 0) acc += src[(row - stride[a]) * n + j];
          if (x[a] + 1 < n) acc += src[(row + stride[a]) * n + j];
        }
        if (j > 0) acc += src[base + j - 1];
        if (j + 1 < n) acc += src[base + j + 1];
        dst[base + j] = center * src[base + j] + neighbor * acc;
      }
    }
  }
}

void torus_forward_difference_omp(int d, int L, int axis, std::span<const double> in,
                                  std::span<double> out) {
  const int outer = d - 1;
  const auto rows = static_cast<std::ptrdiff_t>(ipow(L, outer));
  const std::size_t stride = axis < outer ? ipow(L, outer - 1 - axis) : 0;
  const double* src = in.data();
  double* dst = out.data();

#pragma omp parallel
  {
    std::vector<int> x(outer > 0 ? outer : 1);
#pragma omp for schedule(static)
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
      const auto row = static_cast<std::size_t>(r);
      const std::size_t base = row * L;
      if (axis == d - 1) {
        for (int j = 0; j < L; ++j) dst[base + j] = src[base + (j == L - 1 ? 0 : j + 1)] - src[base + j];
      } else {
        decode_row(row, outer, L, x.data());
        const std::size_t up = x[axis] == L - 1 ? row - (L - 1) * stride : row + stride;
        for (int j = 0; j < L; ++j) dst[base + j] = src[up * L + j] - src[base + j];
      }
    }
  }
}

double dot_omp(std::span<const double> a, std::span<const double> b) {
  const std::size_t blocks = (a.size() + kReductionBlock - 1) / kReductionBlock;
  std::vector<double> partial(blocks, 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t blk = 0; blk < static_cast<std::ptrdiff_t>(blocks); ++blk) {
    const std::size_t start = static_cast<std::size_t>(blk) * kReductionBlock;
    const std::size_t stop = std::min(a.size(), start + kReductionBlock);
    double s = 0.0;
    for (std::size_t i = start; i < stop; ++i) s += a[i] * b[i];
    partial[blk] = s;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

} // namespace entrep::kernels::detail
