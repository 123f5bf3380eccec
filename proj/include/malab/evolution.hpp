#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "error.hpp"
#include "fft.hpp"
#include "lattice.hpp"
#include "noise.hpp"
#include "rng.hpp"

namespace malab {

enum class Integrator { strang, dense };

inline constexpr std::size_t dense_site_cap = 4096;

struct EvolutionSpec {
  HoppingKernel kernel;
  NoiseProcess process;
  double t_final = 0.0;
  double dt = 0.0;  // 0 selects min(0.01, 0.01 T)
  Integrator integrator = Integrator::strang;
  std::vector<double> snapshots;  // empty means {t_final}
  bool record_path = false;

  double substep() const { return dt > 0.0 ? dt : std::min(0.01, 0.01 * process.T()); }

  std::vector<double> snapshot_times() const {
    if (dt < 0.0) throw DomainError("evolution: dt must be positive");
    if (t_final < 0.0) throw DomainError("evolution: t_final must be non-negative");
    std::vector<double> s = snapshots.empty() ? std::vector<double>{t_final} : snapshots;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] < 0.0 || s[i] > t_final) throw DomainError("evolution: snapshot time outside [0, t_final]");
      if (i > 0 && s[i] <= s[i - 1]) throw DomainError("evolution: snapshot times must be strictly increasing");
    }
    return s;
  }
};

/// Piecewise-constant potential path: field[k] holds on [start[k], start[k+1]),
/// the last segment on [start.back(), end].
struct NoisePath {
  std::vector<double> start;
  std::vector<std::vector<double>> field;
  double end = 0.0;
};

/// The same path run backwards in time: segment order reversed, times t -> end - t.
inline NoisePath reversed(const NoisePath& p) {
  NoisePath r;
  r.end = p.end;
  for (std::size_t k = p.start.size(); k-- > 0;) {
    const double seg_end = k + 1 < p.start.size() ? p.start[k + 1] : p.end;
    r.start.push_back(p.end - seg_end);
    r.field.push_back(p.field[k]);
  }
  return r;
}

struct Snapshot {
  double time;
  WaveFunction psi;
};

struct Trajectory {
  std::vector<Snapshot> snapshots;
  NoisePath path;
  std::vector<NoiseEvent> events;
  std::uint64_t stream = 0;
};

/// Potential seen by an integrator piece. Jump models pass the compressed
/// (level index, level value) form alongside, which Strang uses for speed.
struct PotentialRef {
  std::span<const double> field;
  std::span<const int> level;
  std::span<const double> level_values;
};

/// Strang splitting exp(-i d/2 V) exp(-i d K) exp(-i d/2 V), with K applied
/// as a Fourier multiplier on an aligned work buffer.
///
/// The closing half-kick of a step is held back and fused with the opening
/// half-kick of the next one, so a run of steps costs one potential pass per
/// step. Call flush() before reading the state.
class StrangStepper {
 public:
  StrangStepper(const HoppingKernel& kernel, const Lattice& lattice)
      : fft_(FourierTransform::for_extent(lattice.extent())), n_(lattice.size()), buf_(lattice.size()),
        scale_(1.0 / double(lattice.size())) {
    kernel.check_fits(lattice);
    auto sym = symbol_grid(kernel, lattice);
    real_symbol_ = std::all_of(sym.begin(), sym.end(), [](cplx c) { return c.imag() == 0.0; });
    symbol_ = std::move(sym);
    // distinct band energies: symmetric kernels repeat most of them
    std::vector<double> e(n_);
    for (std::size_t i = 0; i < n_; ++i) e[i] = symbol_[i].real();
    energy_ = e;
    std::sort(energy_.begin(), energy_.end());
    energy_.erase(std::unique(energy_.begin(), energy_.end()), energy_.end());
    band_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i)
      band_[i] = static_cast<std::uint32_t>(std::lower_bound(energy_.begin(), energy_.end(), e[i]) - energy_.begin());
    phases_.resize(energy_.size());
    scratch_.resize(n_);
  }

  void load(std::span<const cplx> psi) {
    std::copy(psi.begin(), psi.end(), buf_.data());
    pending_ = 0.0;
  }
  void store(std::span<cplx> out) {
    flush();
    std::copy(buf_.data(), buf_.data() + n_, out.begin());
  }

  /// One splitting step of length delta under potential v. `changed` says v
  /// differs from the previous call; `recurring` marks the regular substep
  /// length, whose kinetic table is cached.
  void step(double delta, const PotentialRef& v, bool changed, bool recurring = true) {
    const double h = 0.5 * delta;
    if (pending_ != 0.0 && changed)
      kick_two(pending_, h, v);
    else
      kick_one(pending_ + h, v);
    cplx* psi = buf_.data();
    fft_->forward(psi);
    const std::vector<cplx>& kin = kinetic(delta, recurring);
    for (std::size_t i = 0; i < n_; ++i) psi[i] *= kin[i];
    fft_->backward(psi);
    pending_ = h;
    remember(v);
  }

  void flush() {
    if (pending_ != 0.0) {
      kick_prev(pending_);
      pending_ = 0.0;
    }
  }

  /// Convenience for a single step on external data.
  void step(cplx* psi, std::size_t n, double delta, const PotentialRef& v) {
    load({psi, n});
    step(delta, v, true, false);
    store({psi, n});
  }

 private:
  // pending kick under the saved potential, then h under v
  void kick_two(double pend, double h, const PotentialRef& v) {
    cplx* psi = buf_.data();
    if (!v.level.empty() && !prev_level_.empty() && prev_values_.size() == v.level_values.size()) {
      const std::size_t K = v.level_values.size();
      table_.resize(K * K);
      for (std::size_t a = 0; a < K; ++a)
        for (std::size_t b = 0; b < K; ++b) table_[a * K + b] = std::polar(1.0, -(pend * prev_values_[a] + h * v.level_values[b]));
      for (std::size_t i = 0; i < n_; ++i) psi[i] *= table_[std::size_t(prev_level_[i]) * K + std::size_t(v.level[i])];
    } else {
      const auto old = previous_field();
      for (std::size_t i = 0; i < n_; ++i) psi[i] *= std::polar(1.0, -(pend * old[i] + h * v.field[i]));
    }
  }

  void kick_one(double h, const PotentialRef& v) {
    cplx* psi = buf_.data();
    if (!v.level.empty()) {
      table_.resize(v.level_values.size());
      for (std::size_t j = 0; j < table_.size(); ++j) table_[j] = std::polar(1.0, -h * v.level_values[j]);
      for (std::size_t i = 0; i < n_; ++i) psi[i] *= table_[v.level[i]];
    } else {
      for (std::size_t i = 0; i < n_; ++i) psi[i] *= std::polar(1.0, -h * v.field[i]);
    }
  }

  void kick_prev(double h) {
    PotentialRef v{prev_field_, prev_level_, prev_values_};
    kick_one(h, v);
  }

  std::span<const double> previous_field() {
    if (!prev_level_.empty()) {
      prev_field_.resize(n_);
      for (std::size_t i = 0; i < n_; ++i) prev_field_[i] = prev_values_[prev_level_[i]];
    }
    return prev_field_;
  }

  void remember(const PotentialRef& v) {
    if (!v.level.empty()) {
      prev_level_.assign(v.level.begin(), v.level.end());
      prev_values_.assign(v.level_values.begin(), v.level_values.end());
      prev_field_.clear();
    } else {
      prev_level_.clear();
      prev_values_.clear();
      prev_field_.assign(v.field.begin(), v.field.end());
    }
  }

  const std::vector<cplx>& kinetic(double delta, bool recurring) {
    for (auto& c : cache_)
      if (c.delta == delta) return c.table;
    std::vector<cplx>* out = &scratch_;
    if (recurring) {
      auto& slot = cache_[next_slot_];
      next_slot_ = (next_slot_ + 1) % cache_.size();
      slot.delta = delta;
      slot.table.resize(n_);
      out = &slot.table;
    }
    auto& t = *out;
    if (real_symbol_) {
      for (std::size_t j = 0; j < energy_.size(); ++j) phases_[j] = std::polar(scale_, -delta * energy_[j]);
      for (std::size_t i = 0; i < n_; ++i) t[i] = phases_[band_[i]];
    } else {
      for (std::size_t i = 0; i < n_; ++i) t[i] = std::exp(cplx(0.0, -delta) * symbol_[i]) * scale_;
    }
    return t;
  }

  struct Cached {
    double delta = std::numeric_limits<double>::quiet_NaN();
    std::vector<cplx> table;
  };
  std::shared_ptr<const FourierTransform> fft_;
  std::size_t n_;
  AlignedBuffer buf_;
  std::vector<cplx> symbol_;
  std::vector<double> energy_;
  std::vector<std::uint32_t> band_;
  std::vector<cplx> phases_;
  bool real_symbol_ = true;
  double scale_;
  std::vector<Cached> cache_ = std::vector<Cached>(2);
  std::size_t next_slot_ = 0;
  std::vector<cplx> scratch_;
  std::vector<cplx> table_;
  double pending_ = 0.0;
  std::vector<int> prev_level_;
  std::vector<double> prev_values_;
  std::vector<double> prev_field_;
};

/// Dense matrix of K on the lattice sites.
inline Eigen::MatrixXcd hopping_matrix(const HoppingKernel& kernel, const Lattice& lattice) {
  kernel.check_fits(lattice);
  const auto n = static_cast<Eigen::Index>(lattice.size());
  Eigen::MatrixXcd K = Eigen::MatrixXcd::Zero(n, n);
  for (const auto& t : kernel.terms())
    for (Eigen::Index y = 0; y < n; ++y) K(static_cast<Eigen::Index>(lattice.shift(y, t.offset)), y) += t.amplitude;
  return K;
}

/// Exact exp(-i delta H) with H = K + diag(v), through a cached
/// eigendecomposition (real symmetric when K is real). Non-Hermitian
/// kernels, used for gauge-twisted companions, take a general eigenbasis.
class DenseStepper {
 public:
  DenseStepper(const HoppingKernel& kernel, const Lattice& lattice) {
    if (lattice.size() > dense_site_cap) throw CapacityError("dense integrator: lattice exceeds the dense site cap");
    K_ = hopping_matrix(kernel, lattice);
    hermitian_ = (K_ - K_.adjoint()).cwiseAbs().maxCoeff() == 0.0;
    real_ = hermitian_ && K_.imag().cwiseAbs().maxCoeff() == 0.0;
  }

  void set_potential(std::span<const double> v) {
    const auto n = K_.rows();
    if (real_) {
      Eigen::MatrixXd H = K_.real();
      for (Eigen::Index i = 0; i < n; ++i) H(i, i) += v[i];
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
      Qr_ = es.eigenvectors();
      lambda_ = es.eigenvalues();
    } else if (hermitian_) {
      Eigen::MatrixXcd H = K_;
      for (Eigen::Index i = 0; i < n; ++i) H(i, i) += v[i];
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(H);
      Qc_ = es.eigenvectors();
      lambda_ = es.eigenvalues();
    } else {
      H_ = K_;
      for (Eigen::Index i = 0; i < n; ++i) H_(i, i) += v[i];
      // diagonalize when well conditioned, else exponentiate per step
      Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(H_);
      diagonal_ = false;
      if (es.info() == Eigen::Success) {
        Eigen::PartialPivLU<Eigen::MatrixXcd> lu(es.eigenvectors());
        if (lu.rcond() > 1e-8) {
          Qc_ = es.eigenvectors();
          Qinv_ = lu.inverse();
          mu_ = es.eigenvalues();
          diagonal_ = true;
        }
      }
    }
  }

  /// X <- exp(-i delta H) X for a vector or matrix X.
  template <class Derived>
  void step(Eigen::MatrixBase<Derived>& X, double delta) const {
    if (real_) {
      Eigen::MatrixXcd Y = Qr_.transpose() * X;
      for (Eigen::Index i = 0; i < Y.rows(); ++i) Y.row(i) *= std::polar(1.0, -delta * lambda_(i));
      X = Qr_ * Y;
    } else if (hermitian_) {
      Eigen::MatrixXcd Y = Qc_.adjoint() * X;
      for (Eigen::Index i = 0; i < Y.rows(); ++i) Y.row(i) *= std::polar(1.0, -delta * lambda_(i));
      X = Qc_ * Y;
    } else if (diagonal_) {
      Eigen::MatrixXcd Y = Qinv_ * X;
      for (Eigen::Index i = 0; i < Y.rows(); ++i) Y.row(i) *= std::exp(cplx(0.0, -delta) * mu_(i));
      X = Qc_ * Y;
    } else {
      Eigen::MatrixXcd E = (cplx(0.0, -delta) * H_).exp();
      X = E * X;
    }
  }

  void step(cplx* psi, std::size_t n, double delta) const {
    Eigen::Map<Eigen::VectorXcd> v(psi, static_cast<Eigen::Index>(n));
    step(v, delta);
  }

 private:
  Eigen::MatrixXcd K_;
  bool hermitian_ = true;
  bool real_ = true;
  Eigen::MatrixXd Qr_;
  Eigen::MatrixXcd Qc_;
  Eigen::VectorXd lambda_;
  Eigen::MatrixXcd H_;
  bool diagonal_ = false;
  Eigen::MatrixXcd Qinv_;
  Eigen::VectorXcd mu_;
};

namespace detail {

/// Runs the noise from its current state to each endpoint, splitting
/// substeps at jump events. `piece(delta, potential, changed, recurring)` integrates a
/// constant-potential interval; `at_endpoint(i)` fires at endpoints[i].
template <class Piece, class AtEndpoint>
void drive(NoiseState& noise, Rng& rng, double h, std::span<const double> endpoints, Piece&& piece,
           AtEndpoint&& at_endpoint, NoisePath* path, std::vector<NoiseEvent>* events) {
  const std::size_t n = noise.lattice.size();
  const bool jump = noise.process.is_jump();
  std::vector<double> field = potential_field(noise);
  std::vector<double> mid(n), inc(n);
  bool changed = true;
  if (path && jump) {
    path->start.push_back(noise.time);
    path->field.push_back(field);
  }
  auto jump_ref = [&] { return PotentialRef{field, noise.config, noise.process.values()}; };
  if (jump && std::isnan(noise.next_event)) detail::draw_clock(noise, rng);

  double t = noise.time;
  for (std::size_t e = 0; e < endpoints.size(); ++e) {
    const double b = endpoints[e];
    if (b > t) {
      const auto steps = static_cast<std::size_t>(std::max(1.0, std::ceil((b - t) / h - 1e-9)));
      const double hs = (b - t) / double(steps);
      const double t_seg = t;
      for (std::size_t k = 0; k < steps; ++k) {
        const double t0 = t;
        const double t1 = (k + 1 == steps) ? b : t_seg + double(k + 1) * hs;
        if (jump) {
          double tc = t0;
          while (noise.next_event <= t1) {
            const double te = noise.next_event;
            if (te > tc) {
              piece(te - tc, jump_ref(), changed, false);
              changed = false;
            }
            const NoiseEvent ev = detail::fire(noise, rng);
            if (ev.site >= 0)
              field[ev.site] = noise.potential(static_cast<std::size_t>(ev.site));
            else
              field = potential_field(noise);
            changed = true;
            if (events) events->push_back(ev);
            if (path) {
              path->start.push_back(te);
              path->field.push_back(field);
            }
            tc = te;
          }
          if (t1 > tc) {
            piece(t1 - tc, jump_ref(), changed, tc == t0);
            changed = false;
          }
          noise.time = t1;
        } else {
          const double d = t1 - t0;
          if (noise.process.frozen()) {
            for (std::size_t x = 0; x < n; ++x) mid[x] = std::cos(noise.angle[x]);
          } else {
            const double sd = std::sqrt(d / noise.process.T());
            for (std::size_t x = 0; x < n; ++x) {
              inc[x] = sd * rng.normal();
              mid[x] = std::cos(noise.angle[x] + 0.5 * inc[x]);
            }
          }
          if (path) {
            path->start.push_back(t0);
            path->field.push_back(mid);
          }
          piece(d, PotentialRef{mid, {}, {}}, true, true);
          if (!noise.process.frozen())
            for (std::size_t x = 0; x < n; ++x) noise.angle[x] = wrap_angle(noise.angle[x] + inc[x]);
          noise.time = t1;
        }
        t = t1;
      }
    }
    at_endpoint(e);
  }
  if (path) path->end = t;
}

}  // namespace detail

/// Integrates the Schroedinger equation along one realization of the noise,
/// starting from a given noise state.
inline Trajectory evolve_from(const WaveFunction& psi0, const EvolutionSpec& spec, NoiseState noise, Rng& rng) {
  const Lattice& lat = psi0.lattice;
  if (psi0.norm2() == 0.0) throw DomainError("evolve: initial state must be nonzero");
  if (!(noise.lattice == lat)) throw DomainError("evolve: noise lattice does not match the wave function");
  spec.kernel.check_fits(lat);
  const auto times = spec.snapshot_times();
  const double h = spec.substep();
  if (!(h > 0.0)) throw DomainError("evolve: dt must be positive");

  Trajectory traj;
  traj.stream = rng.stream();
  WaveFunction psi = psi0;
  const std::size_t n = lat.size();
  auto record = [&](std::size_t i) { traj.snapshots.push_back({times[i], psi}); };
  NoisePath* path = spec.record_path ? &traj.path : nullptr;

  if (spec.integrator == Integrator::strang) {
    StrangStepper st(spec.kernel, lat);
    st.load(psi.amp);
    detail::drive(
        noise, rng, h, times,
        [&](double d, const PotentialRef& v, bool changed, bool recurring) { st.step(d, v, changed, recurring); },
        [&](std::size_t i) {
          st.store(psi.amp);
          record(i);
        },
        path, &traj.events);
  } else {
    DenseStepper st(spec.kernel, lat);
    detail::drive(
        noise, rng, h, times,
        [&](double d, const PotentialRef& v, bool changed, bool) {
          if (changed) st.set_potential(v.field);
          st.step(psi.amp.data(), n, d);
        },
        record, path, &traj.events);
  }
  return traj;
}

/// Stationary start of the noise, then evolve_from.
inline Trajectory evolve(const WaveFunction& psi0, const EvolutionSpec& spec, Rng& rng) {
  NoiseState noise = sample_invariant(spec.process, psi0.lattice, rng);
  return evolve_from(psi0, spec, std::move(noise), rng);
}

/// Records a noise path on [0, t_final] without evolving a wave function.
inline NoisePath sample_path(const EvolutionSpec& spec, const Lattice& lattice, Rng& rng) {
  NoiseState noise = sample_invariant(spec.process, lattice, rng);
  NoisePath path;
  const double end[] = {spec.t_final};
  detail::drive(
      noise, rng, spec.substep(), end, [](double, const PotentialRef&, bool, bool) {}, [](std::size_t) {}, &path,
      nullptr);
  return path;
}

/// Applies the evolution along a recorded path on [s, t] to the columns of X
/// (s <= t), or its inverse when t < s.
template <class Derived>
void propagate_along(Eigen::MatrixBase<Derived>& X, const HoppingKernel& kernel, const Lattice& lattice,
                     const NoisePath& path, double s, double t, Integrator integrator = Integrator::dense,
                     double dt = 0.01) {
  if (path.start.empty()) throw DomainError("propagate: empty noise path");
  const double lo = std::min(s, t), hi = std::max(s, t);
  if (lo < path.start.front() - 1e-12 || hi > path.end + 1e-12) throw DomainError("propagate: times outside the path");
  const bool backward = t < s;
  const std::size_t nseg = path.start.size();
  auto seg_end = [&](std::size_t k) { return k + 1 < nseg ? path.start[k + 1] : path.end; };
  auto overlap = [&](std::size_t k) { return std::max(0.0, std::min(hi, seg_end(k)) - std::max(lo, path.start[k])); };
  const std::size_t n = lattice.size();

  if (integrator == Integrator::dense) {
    DenseStepper st(kernel, lattice);
    for (std::size_t j = 0; j < nseg; ++j) {
      const std::size_t k = backward ? nseg - 1 - j : j;
      const double d = overlap(k);
      if (d <= 0.0) continue;
      st.set_potential(path.field[k]);
      st.step(X, backward ? -d : d);
    }
  } else {
    StrangStepper st(kernel, lattice);
    std::vector<cplx> col(n);
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      for (std::size_t i = 0; i < n; ++i) col[i] = X(static_cast<Eigen::Index>(i), c);
      st.load(col);
      for (std::size_t j = 0; j < nseg; ++j) {
        const std::size_t k = backward ? nseg - 1 - j : j;
        const double d = overlap(k);
        if (d <= 0.0) continue;
        const auto steps = static_cast<std::size_t>(std::max(1.0, std::ceil(d / dt - 1e-9)));
        const double h = (backward ? -d : d) / double(steps);
        for (std::size_t q = 0; q < steps; ++q) st.step(h, PotentialRef{path.field[k], {}, {}}, q == 0, false);
      }
      st.store(col);
      for (std::size_t i = 0; i < n; ++i) X(static_cast<Eigen::Index>(i), c) = col[i];
    }
  }
}

/// Dense propagator U(t, s) over the lattice sites for a recorded path.
struct Propagator {
  Eigen::MatrixXcd U;
  double s = 0.0;
  double t = 0.0;
};

inline Propagator propagator(const EvolutionSpec& spec, const Lattice& lattice, const NoisePath& path, double s,
                             double t) {
  if (lattice.size() > dense_site_cap) throw CapacityError("propagator: lattice exceeds the dense site cap");
  const auto n = static_cast<Eigen::Index>(lattice.size());
  Propagator P{Eigen::MatrixXcd::Identity(n, n), s, t};
  if (s != t) propagate_along(P.U, spec.kernel, lattice, path, s, t, spec.integrator, spec.substep());
  return P;
}

}  // namespace malab
