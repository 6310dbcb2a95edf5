#pragma once

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <vector>

namespace entrep::fft {

/// FFTW planning is not thread-safe; execution with the new-array interface is.
inline std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

template <class T>
using Buffer = std::unique_ptr<T[], FftwFree>;

inline Buffer<double> alloc_real(std::size_t n) {
  return Buffer<double>(static_cast<double*>(fftw_malloc(sizeof(double) * n)));
}

inline Buffer<fftw_complex> alloc_complex(std::size_t n) {
  return Buffer<fftw_complex>(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n)));
}

class Plan {
public:
  Plan() = default;
  explicit Plan(fftw_plan p) : p_(p) {}
  Plan(Plan&& o) noexcept : p_(o.p_) { o.p_ = nullptr; }
  Plan& operator=(Plan&& o) noexcept {
    std::swap(p_, o.p_);
    return *this;
  }
  Plan(const Plan&) = delete;
  Plan& operator=(const Plan&) = delete;
  ~Plan() {
    if (p_) {
      std::lock_guard lock(plan_mutex());
      fftw_destroy_plan(p_);
    }
  }
  fftw_plan get() const { return p_; }

private:
  fftw_plan p_ = nullptr;
};

/// In-place-capable complex DFT of a d-dimensional cube of side L.
inline Plan plan_dft(int d, int L, int sign) {
  std::vector<int> dims(static_cast<std::size_t>(d), L);
  std::size_t n = 1;
  for (int i = 0; i < d; ++i) n *= static_cast<std::size_t>(L);
  auto in = alloc_complex(n);
  auto out = alloc_complex(n);
  std::lock_guard lock(plan_mutex());
  return Plan(fftw_plan_dft(d, dims.data(), in.get(), out.get(), sign, FFTW_ESTIMATE));
}

/// Complex-to-real inverse transform; the last axis holds L/2+1 coefficients.
inline Plan plan_c2r(int d, int L) {
  std::vector<int> dims(static_cast<std::size_t>(d), L);
  std::size_t n_real = 1, n_half = 1;
  for (int i = 0; i < d; ++i) n_real *= static_cast<std::size_t>(L);
  n_half = n_real / static_cast<std::size_t>(L) * static_cast<std::size_t>(L / 2 + 1);
  auto in = alloc_complex(n_half);
  auto out = alloc_real(n_real);
  std::lock_guard lock(plan_mutex());
  return Plan(fftw_plan_dft_c2r(d, dims.data(), in.get(), out.get(), FFTW_ESTIMATE));
}

inline Plan plan_r2c(int d, const std::vector<int>& dims) {
  std::size_t n_real = 1;
  for (int v : dims) n_real *= static_cast<std::size_t>(v);
  const std::size_t n_half = n_real / static_cast<std::size_t>(dims.back()) *
                             static_cast<std::size_t>(dims.back() / 2 + 1);
  auto in = alloc_real(n_real);
  auto out = alloc_complex(n_half);
  std::lock_guard lock(plan_mutex());
  return Plan(fftw_plan_dft_r2c(d, dims.data(), in.get(), out.get(), FFTW_ESTIMATE));
}

inline Plan plan_c2r(int d, const std::vector<int>& dims) {
  std::size_t n_real = 1;
  for (int v : dims) n_real *= static_cast<std::size_t>(v);
  const std::size_t n_half = n_real / static_cast<std::size_t>(dims.back()) *
                             static_cast<std::size_t>(dims.back() / 2 + 1);
  auto in = alloc_complex(n_half);
  auto out = alloc_real(n_real);
  std::lock_guard lock(plan_mutex());
  return Plan(fftw_plan_dft_c2r(d, dims.data(), in.get(), out.get(), FFTW_ESTIMATE));
}

} // namespace entrep::fft
