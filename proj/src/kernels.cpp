#include "kernels_impl.hpp"

#include <atomic>

namespace entrep::kernels {
namespace {
std::atomic<Backend> g_backend{Backend::openmp};
}

Backend default_backend() { return g_backend.load(); }
void set_default_backend(Backend backend) { g_backend.store(backend); }

void torus_stencil(Backend backend, int d, int L, double center, double neighbor,
                   std::span<const double> in, std::span<double> out) {
  if (backend == Backend::serial)
    detail::torus_stencil_serial(d, L, center, neighbor, in, out);
  else
    detail::torus_stencil_omp(d, L, center, neighbor, in, out);
}

void box_stencil(Backend backend, int d, int n, double center, double neighbor,
                 std::span<const double> in, std::span<double> out) {
  if (backend == Backend::serial)
    detail::box_stencil_serial(d, n, center, neighbor, in, out);
  else
    detail::box_stencil_omp(d, n, center, neighbor, in, out);
}

void torus_forward_difference(Backend backend, int d, int L, int axis, std::span<const double> in,
                              std::span<double> out) {
  if (backend == Backend::serial)
    detail::torus_forward_difference_serial(d, L, axis, in, out);
  else
    detail::torus_forward_difference_omp(d, L, axis, in, out);
}

double dot(Backend backend, std::span<const double> a, std::span<const double> b) {
  return backend == Backend::serial ? detail::dot_serial(a, b) : detail::dot_omp(a, b);
}

} // namespace entrep::kernels
