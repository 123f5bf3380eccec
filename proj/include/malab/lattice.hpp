#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"

namespace malab {

using cplx = std::complex<double>;

/// Finite periodic lattice (Z/L_0 Z) x ... x (Z/L_{d-1} Z).
///
/// Sites are stored row-major with the last axis fastest, using torus
/// coordinates n_i in [0, L_i). Every site also has a minimal-image
/// coordinate c_i in (-L_i/2, L_i/2], which is what all distances and
/// exponential weights use. Copies share the coordinate tables.
class Lattice {
 public:
  Lattice() = default;

  explicit Lattice(std::vector<int> extent) {
    if (extent.empty()) throw DomainError("lattice: dimension must be positive");
    for (int L : extent)
      if (L < 3) throw DomainError("lattice: every extent must be at least 3");
    auto impl = std::make_shared<Impl>();
    impl->extent = std::move(extent);
    const int d = static_cast<int>(impl->extent.size());
    std::size_t n = 1;
    for (int L : impl->extent) n *= static_cast<std::size_t>(L);
    impl->size = n;
    impl->coords.resize(n * d);
    impl->norms.resize(n);
    for (std::size_t idx = 0; idx < n; ++idx) {
      std::size_t rem = idx;
      double r2 = 0.0;
      for (int a = d - 1; a >= 0; --a) {
        const int L = impl->extent[a];
        const int t = static_cast<int>(rem % L);
        rem /= L;
        const int c = (2 * t <= L) ? t : t - L;
        impl->coords[idx * d + a] = c;
        r2 += double(c) * c;
      }
      impl->norms[idx] = std::sqrt(r2);
    }
    impl_ = std::move(impl);
  }

  int dim() const { return static_cast<int>(impl_->extent.size()); }
  const std::vector<int>& extent() const { return impl_->extent; }
  std::size_t size() const { return impl_->size; }
  int min_extent() const { return *std::min_element(extent().begin(), extent().end()); }

  /// Minimal-image coordinates of a site.
  std::span<const int> coord(std::size_t idx) const {
    return {impl_->coords.data() + idx * dim(), static_cast<std::size_t>(dim())};
  }

  /// Euclidean norm of the minimal-image coordinate.
  double norm(std::size_t idx) const { return impl_->norms[idx]; }

  /// Index of the site with (arbitrary integer) coordinates c, wrapped onto the torus.
  std::size_t index(std::span<const int> c) const {
    std::size_t idx = 0;
    for (int a = 0; a < dim(); ++a) {
      const int L = impl_->extent[a];
      int t = c[a] % L;
      if (t < 0) t += L;
      idx = idx * L + static_cast<std::size_t>(t);
    }
    return idx;
  }
  std::size_t index(std::initializer_list<int> c) const {
    return index(std::span<const int>(c.begin(), c.size()));
  }

  /// Index of site idx translated by the vector `by`.
  std::size_t shift(std::size_t idx, std::span<const int> by) const {
    std::vector<int> c(coord(idx).begin(), coord(idx).end());
    for (int a = 0; a < dim(); ++a) c[a] += by[a];
    return index(c);
  }

  std::size_t origin() const { return 0; }

  /// Minimal-image distance between two sites.
  double distance(std::size_t x, std::size_t y) const {
    double r2 = 0.0;
    auto cx = coord(x);
    auto cy = coord(y);
    for (int a = 0; a < dim(); ++a) {
      const int L = impl_->extent[a];
      int t = (cx[a] - cy[a]) % L;
      if (t < 0) t += L;
      const int c = (2 * t <= L) ? t : t - L;
      r2 += double(c) * c;
    }
    return std::sqrt(r2);
  }

  bool operator==(const Lattice& o) const {
    return impl_ == o.impl_ || (impl_ && o.impl_ && impl_->extent == o.impl_->extent);
  }

 private:
  struct Impl {
    std::vector<int> extent;
    std::size_t size = 0;
    std::vector<int> coords;
    std::vector<double> norms;
  };
  std::shared_ptr<const Impl> impl_;
};

struct HoppingTerm {
  std::vector<int> offset;
  cplx amplitude;
};

/// Finitely supported translation-invariant hopping kernel h(zeta) with its
/// exponential weight m.
class HoppingKernel {
 public:
  HoppingKernel() = default;
  HoppingKernel(int dim, std::vector<HoppingTerm> terms, double m = 1.0)
      : dim_(dim), terms_(std::move(terms)), m_(m) {
    if (dim <= 0) throw DomainError("kernel: dimension must be positive");
    if (!(m > 0.0)) throw DomainError("kernel: weight m must be positive");
    for (std::size_t i = 0; i < terms_.size(); ++i) {
      if (static_cast<int>(terms_[i].offset.size()) != dim)
        throw DomainError("kernel: offset dimension mismatch");
      for (std::size_t j = 0; j < i; ++j)
        if (terms_[j].offset == terms_[i].offset) throw DomainError("kernel: duplicate offset");
    }
  }

  /// Nearest-neighbour hopping h(+-e_i) = 1.
  static HoppingKernel laplacian(int dim, double m = 1.0) {
    std::vector<HoppingTerm> terms;
    for (int a = 0; a < dim; ++a) {
      for (int s : {1, -1}) {
        std::vector<int> off(dim, 0);
        off[a] = s;
        terms.push_back({off, 1.0});
      }
    }
    return HoppingKernel(dim, std::move(terms), m);
  }

  int dim() const { return dim_; }
  double m() const { return m_; }
  const std::vector<HoppingTerm>& terms() const { return terms_; }

  /// Largest |zeta_i| over the support, per axis.
  std::vector<int> reach() const {
    std::vector<int> r(dim_, 0);
    for (const auto& t : terms_)
      for (int a = 0; a < dim_; ++a) r[a] = std::max(r[a], std::abs(t.offset[a]));
    return r;
  }

  /// Throws unless the kernel can be placed on the lattice without wrap ambiguity.
  void check_fits(const Lattice& lattice) const {
    if (lattice.dim() != dim_) throw DomainError("kernel/lattice dimension mismatch");
    auto r = reach();
    for (int a = 0; a < dim_; ++a)
      if (2 * r[a] >= lattice.extent()[a])
        throw DomainError("kernel offset exceeds half the lattice extent on axis " +
                          std::to_string(a));
  }

 private:
  int dim_ = 0;
  std::vector<HoppingTerm> terms_;
  double m_ = 1.0;
};

/// Exponential profile sup_x e^{mu|x|} |psi(x)| <= A of an initial state.
struct ExpProfile {
  double mu;
  double A;
};

/// Complex amplitude field on a lattice.
struct WaveFunction {
  Lattice lattice;
  std::vector<cplx> amp;
  std::optional<ExpProfile> profile;

  WaveFunction() = default;
  explicit WaveFunction(Lattice lat) : lattice(std::move(lat)), amp(lattice.size(), 0.0) {}
  WaveFunction(Lattice lat, std::vector<cplx> values) : lattice(std::move(lat)), amp(std::move(values)) {
    if (amp.size() != lattice.size()) throw DomainError("wave function: size mismatch");
  }

  static WaveFunction delta(const Lattice& lat, std::span<const int> at) {
    WaveFunction w(lat);
    w.amp[lat.index(at)] = 1.0;
    return w;
  }
  static WaveFunction delta(const Lattice& lat) {
    WaveFunction w(lat);
    w.amp[lat.origin()] = 1.0;
    return w;
  }

  /// psi(x) = A e^{-mu |x|}, which saturates the profile bound at the origin.
  static WaveFunction exponential(const Lattice& lat, double mu, double A) {
    if (!(mu > 0.0) || !(A > 0.0)) throw DomainError("exponential state: mu and A must be positive");
    WaveFunction w(lat);
    for (std::size_t i = 0; i < lat.size(); ++i) w.amp[i] = A * std::exp(-mu * lat.norm(i));
    w.profile = ExpProfile{mu, A};
    return w;
  }

  std::size_t size() const { return amp.size(); }
  double norm2() const {
    double s = 0.0;
    for (const auto& a : amp) s += std::norm(a);
    return s;
  }
  double norm() const { return std::sqrt(norm2()); }

  /// sup_x e^{mu|x|}|psi(x)| on the stored data.
  double profile_sup(double mu) const {
    double s = 0.0;
    for (std::size_t i = 0; i < size(); ++i) s = std::max(s, std::exp(mu * lattice.norm(i)) * std::abs(amp[i]));
    return s;
  }
};

/// (K psi)(x) = sum_zeta h(zeta) psi(x - zeta) with periodic wrap.
inline WaveFunction apply_hopping(const WaveFunction& psi, const HoppingKernel& kernel) {
  const Lattice& lat = psi.lattice;
  kernel.check_fits(lat);
  WaveFunction out(lat);
  std::vector<int> minus(kernel.dim());
  for (const auto& t : kernel.terms()) {
    for (int a = 0; a < kernel.dim(); ++a) minus[a] = -t.offset[a];
    for (std::size_t x = 0; x < lat.size(); ++x) out.amp[x] += t.amplitude * psi.amp[lat.shift(x, minus)];
  }
  return out;
}

/// Fourier multiplier of K: sum_zeta h(zeta) e^{-i k.zeta}.
inline cplx hopping_symbol(const HoppingKernel& kernel, std::span<const double> k) {
  cplx s = 0.0;
  for (const auto& t : kernel.terms()) {
    double phase = 0.0;
    for (int a = 0; a < kernel.dim(); ++a) phase += k[a] * t.offset[a];
    s += t.amplitude * std::polar(1.0, -phase);
  }
  return s;
}

inline double offset_norm(const std::vector<int>& off) {
  double r2 = 0.0;
  for (int c : off) r2 += double(c) * c;
  return std::sqrt(r2);
}

/// v = sum_{zeta != 0} e^{m|zeta|} |h(zeta)|, the Lieb-Robinson velocity of K.
inline double group_velocity(const HoppingKernel& kernel, double m) {
  if (m < 0.0) throw DomainError("group_velocity: m must be non-negative");
  double v = 0.0;
  for (const auto& t : kernel.terms()) {
    const double r = offset_norm(t.offset);
    if (r == 0.0) continue;
    v += std::exp(m * r) * std::abs(t.amplitude);
  }
  return v;
}

struct AssumptionReport {
  bool self_adjoint = false;
  bool exponentially_bounded = false;
  double velocity = 0.0;
  bool non_degenerate = false;
  int support_rank = 0;

  bool all() const { return self_adjoint && exponentially_bounded && non_degenerate; }
};

inline AssumptionReport check_assumptions(const HoppingKernel& kernel, double m) {
  AssumptionReport rep;
  const int d = kernel.dim();
  rep.self_adjoint = true;
  for (const auto& t : kernel.terms()) {
    if (t.amplitude == cplx(0.0)) continue;
    std::vector<int> neg(d);
    for (int a = 0; a < d; ++a) neg[a] = -t.offset[a];
    auto it = std::find_if(kernel.terms().begin(), kernel.terms().end(),
                           [&](const HoppingTerm& o) { return o.offset == neg; });
    const cplx partner = it == kernel.terms().end() ? cplx(0.0) : it->amplitude;
    if (partner != std::conj(t.amplitude)) rep.self_adjoint = false;
  }
  // finite support: the weighted sum is always finite
  rep.velocity = group_velocity(kernel, m);
  rep.exponentially_bounded = std::isfinite(rep.velocity);

  std::vector<const HoppingTerm*> support;
  for (const auto& t : kernel.terms())
    if (t.amplitude != cplx(0.0) && offset_norm(t.offset) > 0.0) support.push_back(&t);
  if (!support.empty()) {
    Eigen::MatrixXd S(support.size(), d);
    for (std::size_t i = 0; i < support.size(); ++i)
      for (int a = 0; a < d; ++a) S(i, a) = support[i]->offset[a];
    rep.support_rank = static_cast<int>(Eigen::FullPivLU<Eigen::MatrixXd>(S).rank());
  }
  rep.non_degenerate = rep.support_rank == d;
  return rep;
}

}  // namespace malab
