#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "error.hpp"
#include "lattice.hpp"
#include "rng.hpp"

namespace malab {

/// Independent per-site resampling from Bernoulli(p) on {+1, -1}, each site
/// at the events of its own rate-1/T Poisson clock.
struct FlipProcess {
  double T = 1.0;
  double p = 0.5;
};

/// The whole field is resampled from the product of nu at the events of a
/// single rate-1/T Poisson clock.
struct ResampleProcess {
  double T = 1.0;
  std::vector<std::pair<double, double>> nu;  // (value, probability)
};

/// Independent Brownian phases with diffusion rate 1/T; v_x = cos(omega(x)).
struct BrownianProcess {
  double T = 1.0;
};

enum class NoiseKind { flip, resample, brownian };

inline const char* to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::flip: return "flip";
    case NoiseKind::resample: return "resample";
    case NoiseKind::brownian: return "brownian";
  }
  return "?";
}

/// One of the three Markov noise models, optionally frozen (static disorder).
class NoiseProcess {
 public:
  NoiseProcess() : NoiseProcess(FlipProcess{}) {}
  NoiseProcess(FlipProcess f, bool frozen = false) : model_(f), frozen_(frozen) {
    if (!(f.T > 0.0)) throw DomainError("flip process: T must be positive");
    if (!(f.p >= 0.0 && f.p <= 1.0)) throw DomainError("flip process: p must lie in [0, 1]");
    values_ = {1.0, -1.0};
    probs_ = {f.p, 1.0 - f.p};
  }
  NoiseProcess(ResampleProcess r, bool frozen = false) : model_(r), frozen_(frozen) {
    if (!(r.T > 0.0)) throw DomainError("resample process: T must be positive");
    if (r.nu.empty()) throw DomainError("resample process: nu must be non-empty");
    double total = 0.0;
    for (auto [v, q] : r.nu) {
      if (!(q >= 0.0) || !std::isfinite(v)) throw DomainError("resample process: invalid nu entry");
      values_.push_back(v);
      probs_.push_back(q);
      total += q;
    }
    if (std::abs(total - 1.0) > 1e-12) throw DomainError("resample process: nu must be normalized");
  }
  NoiseProcess(BrownianProcess b, bool frozen = false) : model_(b), frozen_(frozen) {
    if (!(b.T > 0.0)) throw DomainError("brownian process: T must be positive");
  }

  NoiseKind kind() const { return static_cast<NoiseKind>(model_.index()); }
  bool is_jump() const { return kind() != NoiseKind::brownian; }
  bool frozen() const { return frozen_; }
  NoiseProcess as_frozen(bool f = true) const {
    NoiseProcess c = *this;
    c.frozen_ = f;
    return c;
  }
  double T() const {
    return std::visit([](const auto& m) { return m.T; }, model_);
  }
  const auto& model() const { return model_; }

  /// Single-site support of nu (jump models only).
  const std::vector<double>& values() const { return values_; }
  const std::vector<double>& probs() const { return probs_; }

  std::size_t sample_value(Rng& rng) const {
    const double u = rng.uniform();
    double c = 0.0;
    for (std::size_t i = 0; i + 1 < probs_.size(); ++i) {
      c += probs_[i];
      if (u < c) return i;
    }
    // skip trailing zero-probability values
    std::size_t i = probs_.size() - 1;
    while (i > 0 && probs_[i] == 0.0) --i;
    return i;
  }

  /// Total event rate on a lattice with n sites.
  double event_rate(std::size_t n) const {
    if (frozen_) return 0.0;
    switch (kind()) {
      case NoiseKind::flip: return double(n) / T();
      case NoiseKind::resample: return 1.0 / T();
      default: return 0.0;
    }
  }

 private:
  std::variant<FlipProcess, ResampleProcess, BrownianProcess> model_;
  bool frozen_ = false;
  std::vector<double> values_;
  std::vector<double> probs_;
};

/// Current configuration of a noise process on a lattice.
struct NoiseState {
  NoiseProcess process;
  Lattice lattice;
  std::vector<int> config;    // jump models: index into process.values() per site
  std::vector<double> angle;  // Brownian model: phase per site in [0, 2pi)
  double time = 0.0;
  double next_event = std::numeric_limits<double>::quiet_NaN();  // absolute time of the pending event

  /// v_x(omega) for one site.
  double potential(std::size_t x) const {
    return process.is_jump() ? process.values()[config[x]] : std::cos(angle[x]);
  }
};

struct NoiseEvent {
  double time;
  long site;  // -1 when the whole field is resampled
};

inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a < 0.0) a += two_pi;
  if (a >= two_pi) a = 0.0;
  return a;
}

namespace detail {

inline void draw_clock(NoiseState& s, Rng& rng) {
  const double rate = s.process.event_rate(s.lattice.size());
  s.next_event = rate > 0.0 ? s.time + rng.exponential(rate) : std::numeric_limits<double>::infinity();
}

inline NoiseEvent fire(NoiseState& s, Rng& rng) {
  s.time = s.next_event;
  NoiseEvent ev{s.time, -1};
  if (s.process.kind() == NoiseKind::flip) {
    const std::size_t x = rng.below(s.lattice.size());
    s.config[x] = static_cast<int>(s.process.sample_value(rng));
    ev.site = static_cast<long>(x);
  } else {
    for (auto& c : s.config) c = static_cast<int>(s.process.sample_value(rng));
  }
  draw_clock(s, rng);
  return ev;
}

}  // namespace detail

/// Stationary start: i.i.d. sites from nu (or uniform angles), stationary clock.
inline NoiseState sample_invariant(const NoiseProcess& process, const Lattice& lattice, Rng& rng) {
  NoiseState s{process, lattice, {}, {}, 0.0};
  const std::size_t n = lattice.size();
  if (process.is_jump()) {
    s.config.resize(n);
    for (auto& c : s.config) c = static_cast<int>(process.sample_value(rng));
    detail::draw_clock(s, rng);
  } else {
    s.angle.resize(n);
    for (auto& a : s.angle) a = 2.0 * std::numbers::pi * rng.uniform();
    s.next_event = std::numeric_limits<double>::infinity();
  }
  return s;
}

/// Holding time from the current instant to the pending jump event.
inline double next_event_time(NoiseState& state, Rng& rng) {
  if (!state.process.is_jump()) throw UnsupportedError("next_event_time: Brownian phases have no jump events");
  if (std::isnan(state.next_event)) detail::draw_clock(state, rng);
  return state.next_event - state.time;
}

/// Fires the pending event (time jumps to it). Jump models only.
inline NoiseEvent apply_next_event(NoiseState& state, Rng& rng) {
  if (!state.process.is_jump()) throw UnsupportedError("apply_next_event: Brownian phases have no jump events");
  if (std::isnan(state.next_event)) detail::draw_clock(state, rng);
  if (!std::isfinite(state.next_event)) throw DomainError("apply_next_event: frozen process has no events");
  return detail::fire(state, rng);
}

/// Advances in place through (t, t + dt]; jump events are applied in time
/// order and reported to `on_event`.
template <class OnEvent>
void advance_in_place(NoiseState& state, double dt, Rng& rng, OnEvent&& on_event) {
  if (!(dt > 0.0)) throw DomainError("advance: dt must be positive");
  const double t_end = state.time + dt;
  if (state.process.is_jump()) {
    if (std::isnan(state.next_event)) detail::draw_clock(state, rng);
    while (state.next_event <= t_end) on_event(detail::fire(state, rng));
  } else if (!state.process.frozen()) {
    const double sd = std::sqrt(dt / state.process.T());
    for (auto& a : state.angle) a = wrap_angle(a + sd * rng.normal());
  }
  state.time = t_end;
}

inline NoiseState advance(NoiseState state, double dt, Rng& rng) {
  advance_in_place(state, dt, rng, [](const NoiseEvent&) {});
  return state;
}

inline std::vector<double> potential_field(const NoiseState& state) {
  std::vector<double> v(state.lattice.size());
  for (std::size_t x = 0; x < v.size(); ++x) v[x] = state.potential(x);
  return v;
}

/// Cyclic shift of a noise configuration: (sigma_a omega)(u) = omega(u + a).
inline NoiseState shifted(const NoiseState& state, std::span<const int> a) {
  NoiseState s = state;
  const Lattice& lat = state.lattice;
  for (std::size_t u = 0; u < lat.size(); ++u) {
    const std::size_t src = lat.shift(u, a);
    if (state.process.is_jump())
      s.config[u] = state.config[src];
    else
      s.angle[u] = state.angle[src];
  }
  return s;
}

inline constexpr std::size_t default_config_cap = std::size_t{1} << 14;

/// Enumeration of the finite configuration space of a jump model, with
/// configurations encoded in mixed radix K = |supp nu|, site x at digit x.
class ConfigSpace {
 public:
  ConfigSpace(const NoiseProcess& process, const Lattice& lattice, std::size_t cap = default_config_cap)
      : lattice_(lattice), values_(process.values()), probs_(process.probs()) {
    if (!process.is_jump()) throw UnsupportedError("configuration space: Brownian model has a continuous state space");
    K_ = values_.size();
    N_ = lattice.size();
    count_ = 1;
    for (std::size_t i = 0; i < N_; ++i) {
      if (count_ > cap / K_) throw CapacityError("configuration space exceeds cap of " + std::to_string(cap));
      count_ *= K_;
    }
    pow_.resize(N_);
    std::size_t p = 1;
    for (std::size_t i = 0; i < N_; ++i) {
      pow_[i] = p;
      p *= K_;
    }
    mu_.resize(count_);
    for (std::size_t c = 0; c < count_; ++c) {
      double m = 1.0;
      for (std::size_t x = 0; x < N_; ++x) m *= probs_[digit(c, x)];
      mu_[c] = m;
    }
  }

  std::size_t count() const { return count_; }
  std::size_t sites() const { return N_; }
  std::size_t radix() const { return K_; }
  const Lattice& lattice() const { return lattice_; }
  std::size_t digit(std::size_t c, std::size_t x) const { return (c / pow_[x]) % K_; }
  std::size_t with_digit(std::size_t c, std::size_t x, std::size_t s) const {
    return c + (s - digit(c, x)) * pow_[x];
  }
  double value(std::size_t c, std::size_t x) const { return values_[digit(c, x)]; }
  double prob_value(std::size_t s) const { return probs_[s]; }
  /// mu(c), the invariant product measure.
  double mu(std::size_t c) const { return mu_[c]; }
  const std::vector<double>& mu() const { return mu_; }

  /// Index of sigma_a(c).
  std::size_t shift(std::size_t c, std::span<const int> a) const {
    std::size_t out = 0;
    for (std::size_t u = 0; u < N_; ++u) out += digit(c, lattice_.shift(u, a)) * pow_[u];
    return out;
  }

 private:
  Lattice lattice_;
  std::vector<double> values_, probs_;
  std::size_t K_ = 0, N_ = 0, count_ = 0;
  std::vector<std::size_t> pow_;
  std::vector<double> mu_;
};

/// (1/T)(I - P_nu) on one site's coordinate, the building block of the flip generator.
inline Eigen::MatrixXd single_site_generator(const NoiseProcess& process) {
  if (!process.is_jump()) throw UnsupportedError("single-site generator: Brownian model unsupported");
  const auto K = static_cast<Eigen::Index>(process.values().size());
  Eigen::RowVectorXd nu(K);
  for (Eigen::Index s = 0; s < K; ++s) nu(s) = process.probs()[s];
  if (process.frozen()) return Eigen::MatrixXd::Zero(K, K);
  return (Eigen::MatrixXd::Identity(K, K) - Eigen::VectorXd::Ones(K) * nu) / process.T();
}

/// Matrix of B acting on functions of the configuration (value basis):
/// (Bf)(c) = sum_c' B(c, c') f(c'), with B 1 = 0.
inline Eigen::SparseMatrix<double> generator_matrix(const NoiseProcess& process, const Lattice& lattice,
                                                    std::size_t cap = default_config_cap) {
  ConfigSpace cs(process, lattice, cap);
  const std::size_t C = cs.count();
  const double rate = 1.0 / process.T();
  std::vector<Eigen::Triplet<double>> trip;
  if (process.frozen()) {
    Eigen::SparseMatrix<double> Z(C, C);
    return Z;
  }
  if (process.kind() == NoiseKind::flip) {
    trip.reserve(C * (cs.sites() * cs.radix() + 1));
    for (std::size_t c = 0; c < C; ++c) {
      trip.emplace_back(c, c, rate * double(cs.sites()));
      for (std::size_t x = 0; x < cs.sites(); ++x)
        for (std::size_t s = 0; s < cs.radix(); ++s)
          if (cs.prob_value(s) != 0.0) trip.emplace_back(c, cs.with_digit(c, x, s), -rate * cs.prob_value(s));
    }
  } else {
    trip.reserve(C * (C + 1));
    for (std::size_t c = 0; c < C; ++c) {
      trip.emplace_back(c, c, rate);
      for (std::size_t c2 = 0; c2 < C; ++c2)
        if (cs.mu(c2) != 0.0) trip.emplace_back(c, c2, -rate * cs.mu(c2));
    }
  }
  Eigen::SparseMatrix<double> B(C, C);
  B.setFromTriplets(trip.begin(), trip.end());
  return B;
}

struct GeneratorReport {
  double gap = 0.0;  // smallest real part of the spectrum on mean-zero functions
  double q = 0.0;    // sector slope
  double b = 0.0;    // sector offset (arbitrary when q = 0)
  double chi = 0.0;  // min_{x != 0} ||B^{-1}(v_x - v_0)||
  long chi_site = -1;
  bool self_adjoint = false;
};

inline constexpr std::size_t dense_generator_cap = std::size_t{1} << 12;

/// Gap, sectoriality and potential non-degeneracy of B for a jump model.
inline GeneratorReport generator_report(const NoiseProcess& process, const Lattice& lattice,
                                        std::size_t cap = dense_generator_cap) {
  ConfigSpace cs(process, lattice, cap);
  const auto C = static_cast<Eigen::Index>(cs.count());
  for (std::size_t s = 0; s < cs.radix(); ++s)
    if (!(cs.prob_value(s) > 0.0)) throw DomainError("generator_report: nu must charge every value of its support");
  Eigen::MatrixXd B = Eigen::MatrixXd(generator_matrix(process, lattice, cap));
  // orthonormal coordinates of L^2(mu): g = sqrt(mu) f
  Eigen::VectorXd s(C);
  for (Eigen::Index c = 0; c < C; ++c) s(c) = std::sqrt(cs.mu(c));
  Eigen::MatrixXd Bs = s.asDiagonal() * B * s.cwiseInverse().asDiagonal();

  GeneratorReport rep;
  rep.self_adjoint = (Bs - Bs.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, Bs.cwiseAbs().maxCoeff());
  if (rep.self_adjoint) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (Bs + Bs.transpose()));
    Eigen::Index skip = 0;
    (es.eigenvectors().transpose() * s).cwiseAbs().maxCoeff(&skip);
    rep.gap = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < C; ++i)
      if (i != skip) rep.gap = std::min(rep.gap, es.eigenvalues()(i));
    // real symmetric: <f, Bf> is real for every eigenvector
    rep.q = 0.0;
    rep.b = 0.0;
  } else {
    Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(Bs.cast<cplx>());
    Eigen::Index skip = 0;
    (es.eigenvectors().adjoint() * s.cast<cplx>()).cwiseAbs().maxCoeff(&skip);
    rep.gap = std::numeric_limits<double>::infinity();
    rep.b = 0.0;
    rep.q = 0.0;
    for (Eigen::Index i = 0; i < C; ++i) {
      if (i == skip) continue;
      rep.gap = std::min(rep.gap, es.eigenvalues()(i).real());
      Eigen::VectorXcd f = es.eigenvectors().col(i);
      const cplx form = f.dot(Bs.cast<cplx>() * f);
      rep.q = std::max(rep.q, std::abs(form.imag()) / std::abs(form.real() + rep.b));
    }
  }
  if (C == 1) rep.gap = std::numeric_limits<double>::infinity();

  // B^{-1} on mean-zero functions through the bordered system [[Bs, s], [s^T, 0]]
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(C + 1, C + 1);
  M.topLeftCorner(C, C) = Bs;
  M.block(0, C, C, 1) = s;
  M.block(C, 0, 1, C) = s.transpose();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(M);
  rep.chi = std::numeric_limits<double>::infinity();
  for (std::size_t x = 1; x < cs.sites(); ++x) {
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(C + 1);
    for (Eigen::Index c = 0; c < C; ++c) rhs(c) = s(c) * (cs.value(c, x) - cs.value(c, 0));
    const double n = lu.solve(rhs).head(C).norm();
    if (n < rep.chi) {
      rep.chi = n;
      rep.chi_site = static_cast<long>(x);
    }
  }
  return rep;
}

}  // namespace malab
