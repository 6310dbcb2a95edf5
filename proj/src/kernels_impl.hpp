#pragma once

#include "entrep/kernels.hpp"

#include <algorithm>

namespace entrep::kernels::detail {

void torus_stencil_serial(int d, int L, double center, double neighbor, std::span<const double> in,
                          std::span<double> out);
void torus_stencil_omp(int d, int L, double center, double neighbor, std::span<const double> in,
                       std::span<double> out);
void box_stencil_serial(int d, int n, double center, double neighbor, std::span<const double> in,
                        std::span<double> out);
void box_stencil_omp(int d, int n, double center, double neighbor, std::span<const double> in,
                     std::span<double> out);
void torus_forward_difference_serial(int d, int L, int axis, std::span<const double> in,
                                     std::span<double> out);
void torus_forward_difference_omp(int d, int L, int axis, std::span<const double> in,
                                  std::span<double> out);
double dot_serial(std::span<const double> a, std::span<const double> b);
double dot_omp(std::span<const double> a, std::span<const double> b);

} // namespace entrep::kernels::detail
