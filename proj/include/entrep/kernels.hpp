#pragma once

#include <cstddef>
#include <span>

// Data-parallel stencil kernels. Each kernel has a serial reference
// implementation (a direct per-site loop, kept for testing) and an OpenMP
// implementation. Both evaluate every output site with the same arithmetic in
// the same order, so their results are bitwise identical.

namespace entrep::kernels {

enum class Backend { serial, openmp };

/// Backend used by the library's higher-level operations. Defaults to openmp.
Backend default_backend();
void set_default_backend(Backend backend);

/// Periodic nearest-neighbour stencil on Z_L^d:
///   out(x) = center * in(x) + neighbor * sum_{|y-x|=1} in(y).
/// Neighbours are accumulated axis by axis, minus direction first.
void torus_stencil(Backend backend, int d, int L, double center, double neighbor,
                   std::span<const double> in, std::span<double> out);

/// Same stencil on the box [0,n)^d with zero values outside the box.
void box_stencil(Backend backend, int d, int n, double center, double neighbor,
                 std::span<const double> in, std::span<double> out);

/// Forward difference along `axis` (0-based) with periodic wraparound.
void torus_forward_difference(Backend backend, int d, int L, int axis,
                              std::span<const double> in, std::span<double> out);

/// Blocked dot product; block partial sums are combined in a fixed order so
/// the result does not depend on the thread count.
double dot(Backend backend, std::span<const double> a, std::span<const double> b);

inline constexpr std::size_t kReductionBlock = 4096;

} // namespace entrep::kernels
