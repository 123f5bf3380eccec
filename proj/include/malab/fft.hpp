#pragma once

#include <algorithm>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <new>
#include <numbers>
#include <utility>
#include <vector>

#include <fftw3.h>

#include "lattice.hpp"

namespace malab {

namespace detail {
// FFTW planning (and plan destruction) is not thread-safe; execution is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

/// fftw_malloc'd complex array, aligned for the SIMD plans.
class AlignedBuffer {
 public:
  AlignedBuffer() = default;
  explicit AlignedBuffer(std::size_t n) : n_(n), p_(static_cast<cplx*>(fftw_malloc(sizeof(cplx) * std::max<std::size_t>(n, 1)))) {
    if (!p_) throw std::bad_alloc();
    std::fill(p_, p_ + n_, cplx(0.0));
  }
  AlignedBuffer(AlignedBuffer&& o) noexcept : n_(std::exchange(o.n_, 0)), p_(std::exchange(o.p_, nullptr)) {}
  AlignedBuffer& operator=(AlignedBuffer&& o) noexcept {
    std::swap(n_, o.n_);
    std::swap(p_, o.p_);
    return *this;
  }
  AlignedBuffer(const AlignedBuffer&) = delete;
  AlignedBuffer& operator=(const AlignedBuffer&) = delete;
  ~AlignedBuffer() {
    if (p_) fftw_free(p_);
  }
  cplx* data() { return p_; }
  const cplx* data() const { return p_; }
  std::size_t size() const { return n_; }
  cplx& operator[](std::size_t i) { return p_[i]; }

 private:
  std::size_t n_ = 0;
  cplx* p_ = nullptr;
};

/// In-place multidimensional DFT over the torus coordinates of a lattice.
/// Forward: a(k) = sum_n a(n) e^{-2 pi i k.n / L}; backward is unnormalized.
///
/// Plans use FFTW_ESTIMATE: measured plans can differ between processes,
/// and with them the last bits of every trajectory.
class FourierTransform {
 public:
  explicit FourierTransform(const std::vector<int>& extent) : n_(1) {
    for (int L : extent) n_ *= static_cast<std::size_t>(L);
    AlignedBuffer scratch(n_);
    auto* p = reinterpret_cast<fftw_complex*>(scratch.data());
    align_ = fftw_alignment_of(reinterpret_cast<double*>(p));
    std::lock_guard lock(detail::fftw_planner_mutex());
    const int rank = static_cast<int>(extent.size());
    forward_ = fftw_plan_dft(rank, extent.data(), p, p, FFTW_FORWARD, FFTW_ESTIMATE);
    backward_ = fftw_plan_dft(rank, extent.data(), p, p, FFTW_BACKWARD, FFTW_ESTIMATE);
    forward_u_ = fftw_plan_dft(rank, extent.data(), p, p, FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
    backward_u_ = fftw_plan_dft(rank, extent.data(), p, p, FFTW_BACKWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  FourierTransform(const FourierTransform&) = delete;
  FourierTransform& operator=(const FourierTransform&) = delete;
  ~FourierTransform() {
    std::lock_guard lock(detail::fftw_planner_mutex());
    for (auto pl : {forward_, backward_, forward_u_, backward_u_}) fftw_destroy_plan(pl);
  }

  /// Shared plan for a lattice shape.
  static std::shared_ptr<const FourierTransform> for_extent(const std::vector<int>& extent) {
    static std::mutex cache_mutex;
    static std::map<std::vector<int>, std::shared_ptr<const FourierTransform>> cache;
    std::lock_guard lock(cache_mutex);
    auto& slot = cache[extent];
    if (!slot) slot = std::make_shared<const FourierTransform>(extent);
    return slot;
  }

  std::size_t size() const { return n_; }

  void forward(cplx* data) const { run(forward_, forward_u_, data); }
  void backward(cplx* data) const { run(backward_, backward_u_, data); }

 private:
  void run(fftw_plan aligned, fftw_plan unaligned, cplx* data) const {
    auto* p = reinterpret_cast<fftw_complex*>(data);
    const bool ok = fftw_alignment_of(reinterpret_cast<double*>(p)) == align_;
    fftw_execute_dft(ok ? aligned : unaligned, p, p);
  }

  std::size_t n_;
  int align_ = 0;
  fftw_plan forward_{}, backward_{}, forward_u_{}, backward_u_{};
};

/// hopping_symbol at every dual-grid momentum, in FFT output order.
inline std::vector<cplx> symbol_grid(const HoppingKernel& kernel, const Lattice& lattice) {
  const int d = lattice.dim();
  std::vector<cplx> out(lattice.size());
  std::vector<double> k(d);
  for (std::size_t idx = 0; idx < lattice.size(); ++idx) {
    std::size_t rem = idx;
    for (int a = d - 1; a >= 0; --a) {
      const int L = lattice.extent()[a];
      k[a] = 2.0 * std::numbers::pi * double(rem % L) / double(L);
      rem /= L;
    }
    out[idx] = hopping_symbol(kernel, k);
  }
  return out;
}

}  // namespace malab
