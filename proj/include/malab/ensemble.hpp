#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "evolution.hpp"
#include "lattice.hpp"
#include "parallel.hpp"

namespace malab {

using ZVec = std::vector<cplx>;

/// Streaming mean and centred second moment of a fixed-length vector.
struct Welford {
  std::size_t n = 0;
  std::vector<double> mean;
  std::vector<double> m2;

  explicit Welford(std::size_t len = 0) : mean(len, 0.0), m2(len, 0.0) {}

  void add(const std::vector<double>& x) {
    ++n;
    const double inv = 1.0 / double(n);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - mean[i];
      mean[i] += d * inv;
      m2[i] += d * (x[i] - mean[i]);
    }
  }

  /// Chan et al. pairwise combination; `this` is the left operand.
  void merge(const Welford& o) {
    if (o.n == 0) return;
    if (n == 0) {
      *this = o;
      return;
    }
    const double na = double(n), nb = double(o.n), nt = na + nb;
    for (std::size_t i = 0; i < mean.size(); ++i) {
      const double d = o.mean[i] - mean[i];
      mean[i] += d * nb / nt;
      m2[i] += o.m2[i] + d * d * na * nb / nt;
    }
    n += o.n;
  }

  double standard_error(std::size_t i) const {
    if (n < 2) return 0.0;
    return std::sqrt(std::max(0.0, m2[i]) / double(n - 1) / double(n));
  }
};

/// Per-trajectory scalar sum_x w(t, x) |psi_t(x)|^2 tracked alongside the density.
struct Observable {
  std::string name;
  std::function<cplx(double t, std::span<const int> x)> weight;
};

struct EnsembleOptions {
  unsigned threads = 0;
  double boundary_threshold = 1e-6;
  std::size_t block = 16;  // trajectories per accumulation block; part of the result's definition
  bool same_stream = false;  // every trajectory reuses stream 0 (degenerate sample)
  std::vector<Observable> observables;
};

struct ScalarEstimate {
  cplx mean;
  double se_re = 0.0;
  double se_im = 0.0;
  double se() const { return std::hypot(se_re, se_im); }
};

struct DensityEstimate {
  Lattice lattice;
  std::vector<double> times;
  std::size_t n_traj = 0;
  std::uint64_t master_seed = 0;
  double norm2_0 = 0.0;
  std::optional<ExpProfile> profile;
  std::vector<std::vector<double>> mean;      // [time][site] sample mean of |psi|^2
  std::vector<std::vector<double>> se;        // standard error of the above
  std::vector<std::vector<double>> mean_abs;  // sample mean of |psi|
  std::vector<double> boundary_mass;          // mass on sites with |x_i| > 0.4 L_i
  double boundary_threshold = 1e-6;
  bool valid = true;
  std::vector<std::string> observable_names;
  std::vector<std::vector<ScalarEstimate>> observables;  // [time][observable]

  std::size_t time_index(double t) const {
    for (std::size_t i = 0; i < times.size(); ++i)
      if (std::abs(times[i] - t) <= 1e-12 * std::max(1.0, std::abs(t))) return i;
    throw DomainError("density estimate: no snapshot at t = " + std::to_string(t));
  }
  const ScalarEstimate& observable(const std::string& name, std::size_t ti) const {
    for (std::size_t k = 0; k < observable_names.size(); ++k)
      if (observable_names[k] == name) return observables[ti][k];
    throw DomainError("density estimate: unknown observable " + name);
  }
};

/// Whether a site lies in the outer band |x_i| > 0.4 L_i of the torus.
inline bool in_boundary_band(const Lattice& lat, std::size_t site) {
  auto c = lat.coord(site);
  for (int a = 0; a < lat.dim(); ++a)
    if (std::abs(c[a]) > 0.4 * lat.extent()[a]) return true;
  return false;
}

/// Monte Carlo over n_traj trajectories with streams (master_seed, i).
inline DensityEstimate run_ensemble(const WaveFunction& psi0, const EvolutionSpec& spec, std::size_t n_traj,
                                    std::uint64_t master_seed, const EnsembleOptions& opt = {}) {
  if (n_traj < 2) throw DomainError("run_ensemble: n_traj must be at least 2");
  if (opt.block == 0) throw DomainError("run_ensemble: block size must be positive");
  const Lattice& lat = psi0.lattice;
  const auto times = spec.snapshot_times();
  const std::size_t N = lat.size(), nt = times.size(), K = opt.observables.size();

  // precomputed weights [time][obs][site]
  std::vector<cplx> weights(nt * K * N);
  for (std::size_t ti = 0; ti < nt; ++ti)
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t x = 0; x < N; ++x) weights[(ti * K + k) * N + x] = opt.observables[k].weight(times[ti], lat.coord(x));

  const std::size_t len = nt * (2 * N + 2 * K);
  const std::size_t n_blocks = (n_traj + opt.block - 1) / opt.block;
  auto merge = [](Welford& a, const Welford& b) { a.merge(b); };
  OrderedReducer<Welford, decltype(merge)> reducer(merge);

  parallel_for(n_blocks, opt.threads, [&](std::size_t b) {
    Welford acc(len);
    std::vector<double> row(len);
    const std::size_t lo = b * opt.block, hi = std::min(n_traj, lo + opt.block);
    for (std::size_t i = lo; i < hi; ++i) {
      Rng rng(master_seed, opt.same_stream ? 0 : i);
      auto tr = evolve(psi0, spec, rng);
      for (std::size_t ti = 0; ti < nt; ++ti) {
        const auto& amp = tr.snapshots[ti].psi.amp;
        double* dens = row.data() + ti * N;
        double* absr = row.data() + nt * N + ti * N;
        for (std::size_t x = 0; x < N; ++x) {
          dens[x] = std::norm(amp[x]);
          absr[x] = std::abs(amp[x]);
        }
        double* obs = row.data() + 2 * nt * N + ti * 2 * K;
        for (std::size_t k = 0; k < K; ++k) {
          cplx s = 0.0;
          const cplx* w = weights.data() + (ti * K + k) * N;
          for (std::size_t x = 0; x < N; ++x) s += w[x] * dens[x];
          obs[2 * k] = s.real();
          obs[2 * k + 1] = s.imag();
        }
      }
      acc.add(row);
    }
    reducer.push(b, std::move(acc));
  });
  Welford all = reducer.finish();

  DensityEstimate est;
  est.lattice = lat;
  est.times = times;
  est.n_traj = n_traj;
  est.master_seed = master_seed;
  est.norm2_0 = psi0.norm2();
  est.profile = psi0.profile;
  est.boundary_threshold = opt.boundary_threshold;
  est.mean.assign(nt, std::vector<double>(N));
  est.se.assign(nt, std::vector<double>(N));
  est.mean_abs.assign(nt, std::vector<double>(N));
  est.boundary_mass.assign(nt, 0.0);
  for (const auto& o : opt.observables) est.observable_names.push_back(o.name);
  est.observables.assign(nt, std::vector<ScalarEstimate>(K));
  for (std::size_t ti = 0; ti < nt; ++ti) {
    double band = 0.0;
    for (std::size_t x = 0; x < N; ++x) {
      const std::size_t i = ti * N + x;
      est.mean[ti][x] = std::max(0.0, all.mean[i]);
      est.se[ti][x] = all.standard_error(i);
      est.mean_abs[ti][x] = all.mean[nt * N + i];
      if (in_boundary_band(lat, x)) band += est.mean[ti][x];
    }
    est.boundary_mass[ti] = band / est.norm2_0;
    if (est.boundary_mass[ti] > opt.boundary_threshold) est.valid = false;
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t j = 2 * nt * N + ti * 2 * K + 2 * k;
      est.observables[ti][k] = {cplx(all.mean[j], all.mean[j + 1]), all.standard_error(j), all.standard_error(j + 1)};
    }
  }
  return est;
}

struct MomentSeries {
  std::vector<double> times;
  std::vector<double> p;
  std::vector<std::vector<double>> value;  // [time][p]
  std::vector<std::vector<double>> se;
};

inline void require_valid(const DensityEstimate& est, bool allow_invalid, const char* who) {
  if (!est.valid && !allow_invalid)
    throw DomainError(std::string(who) + ": estimate flagged invalid (boundary mass above threshold)");
}

/// sum_x |x|^p rho_t(x), with standard errors propagated linearly from the per-site errors.
inline MomentSeries moments(const DensityEstimate& est, const std::vector<double>& ps, bool allow_invalid = false) {
  require_valid(est, allow_invalid, "moments");
  MomentSeries m{est.times, ps, {}, {}};
  const Lattice& lat = est.lattice;
  for (std::size_t ti = 0; ti < est.times.size(); ++ti) {
    std::vector<double> v(ps.size(), 0.0), e(ps.size(), 0.0);
    for (std::size_t j = 0; j < ps.size(); ++j) {
      for (std::size_t x = 0; x < lat.size(); ++x) {
        const double w = ps[j] == 0.0 ? 1.0 : std::pow(lat.norm(x), ps[j]);
        v[j] += w * est.mean[ti][x];
        e[j] += w * est.se[ti][x];
      }
    }
    m.value.push_back(v);
    m.se.push_back(e);
  }
  return m;
}

/// Largest |Im z_i|; z must satisfy it < mu of the initial state.
inline double max_imag(const ZVec& z) {
  double m = 0.0;
  for (auto c : z) m = std::max(m, std::abs(c.imag()));
  return m;
}

/// States without a profile are treated as finitely supported (every state on
/// a finite torus is), which puts no limit on Im z.
inline void check_strip(const ZVec& z, const std::optional<ExpProfile>& profile, const char* who) {
  const double y = max_imag(z);
  if (y == 0.0 || !profile) return;
  if (!(y < profile->mu))
    throw DomainError(std::string(who) + ": Im z outside the analyticity strip |Im z_i| < mu = " +
                      std::to_string(profile->mu));
}

/// e^{i z.x} on minimal-image coordinates.
inline cplx plane_weight(const ZVec& z, std::span<const int> x) {
  cplx ph = 0.0;
  for (std::size_t a = 0; a < z.size(); ++a) ph += z[a] * double(x[a]);
  return std::exp(cplx(0.0, 1.0) * ph);
}

/// M_t(z) = sum_x e^{i z.x} rho_t(x) at one snapshot, with a linearly propagated error bar.
inline ScalarEstimate char_fn(const DensityEstimate& est, std::size_t ti, const ZVec& z, bool allow_invalid = false) {
  if (static_cast<int>(z.size()) != est.lattice.dim()) throw DomainError("char_fn: z dimension mismatch");
  if (max_imag(z) > 0.0) require_valid(est, allow_invalid, "char_fn");
  check_strip(z, est.profile, "char_fn");
  ScalarEstimate r{0.0, 0.0, 0.0};
  for (std::size_t x = 0; x < est.lattice.size(); ++x) {
    const cplx w = plane_weight(z, est.lattice.coord(x));
    r.mean += w * est.mean[ti][x];
    r.se_re += std::abs(w.real()) * est.se[ti][x];
    r.se_im += std::abs(w.imag()) * est.se[ti][x];
  }
  return r;
}

struct ExpMomentRow {
  double t;
  double pointwise;        // sup_x e^{mu|x|} E|psi_t(x)|
  double pointwise_bound;  // A e^{v t}
  double lambda;
  double weighted_sum;     // sum_x e^{lambda|x|} rho_t(x)
  double sum_bound;        // ||psi0|| A e^{v t} sum_x e^{-(mu-lambda)|x|}
  double closed_form;       // C e^{v t} / (mu - lambda)^d with C = ||psi0|| A (mu + 2 sqrt d)^d
  bool pass;
};

struct ExpMomentReport {
  double mu, lambda, v;
  std::vector<ExpMomentRow> rows;
  bool all_pass() const {
    for (const auto& r : rows)
      if (!r.pass) return false;
    return true;
  }
};

/// Exponential-moment bounds for an initial state with profile (mu, A).
/// v is the group velocity at weight mu, which requires mu <= m.
///
/// Far from the origin e^{mu|x|} magnifies rounding noise in |psi| by up to
/// e^{mu L/2}; mean amplitudes below `floor` (relative to ||psi0||) are read
/// as zero in the pointwise supremum.
inline ExpMomentReport exp_moment_check(const DensityEstimate& est, double lambda, const HoppingKernel& kernel,
                                        double m, double floor = 1e-13) {
  if (!est.profile) throw DomainError("exp_moment_check: initial state carries no exponential profile");
  const double mu = est.profile->mu, A = est.profile->A;
  if (mu > m) throw DomainError("exp_moment_check: mu exceeds the kernel weight m");
  if (!(lambda >= 0.0 && lambda < mu)) throw DomainError("exp_moment_check: need 0 <= lambda < mu");
  const Lattice& lat = est.lattice;
  const int d = lat.dim();
  ExpMomentReport rep{mu, lambda, group_velocity(kernel, mu), {}};
  double tail = 0.0;
  for (std::size_t x = 0; x < lat.size(); ++x) tail += std::exp(-(mu - lambda) * lat.norm(x));
  const double norm0 = std::sqrt(est.norm2_0);
  for (std::size_t ti = 0; ti < est.times.size(); ++ti) {
    ExpMomentRow r{};
    r.t = est.times[ti];
    r.lambda = lambda;
    const double grow = std::exp(rep.v * r.t);
    for (std::size_t x = 0; x < lat.size(); ++x) {
      const double a = est.mean_abs[ti][x] > floor * norm0 ? est.mean_abs[ti][x] : 0.0;
      r.pointwise = std::max(r.pointwise, std::exp(mu * lat.norm(x)) * a);
      r.weighted_sum += std::exp(lambda * lat.norm(x)) * est.mean[ti][x];
    }
    r.pointwise_bound = A * grow;
    r.sum_bound = norm0 * A * grow * tail;
    r.closed_form = norm0 * A * std::pow(mu + 2.0 * std::sqrt(double(d)), d) * grow / std::pow(mu - lambda, d);
    const double slack = 1e-12 * r.pointwise_bound;
    r.pass = r.pointwise <= r.pointwise_bound + slack && r.weighted_sum <= r.sum_bound * (1 + 1e-12);
    rep.rows.push_back(r);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Gaussian reference functionals

struct RadialPower {
  int power;  // 2 or 4
};
struct GaussianBump {
  std::vector<double> center;
  double width = 1.0;
};
using TestFunction = std::variant<RadialPower, GaussianBump>;

inline double evaluate(const TestFunction& f, std::span<const double> x) {
  if (auto* p = std::get_if<RadialPower>(&f)) {
    double r2 = 0.0;
    for (double c : x) r2 += c * c;
    return std::pow(r2, 0.5 * p->power);
  }
  const auto& b = std::get<GaussianBump>(f);
  double r2 = 0.0;
  for (std::size_t a = 0; a < x.size(); ++a) r2 += (x[a] - b.center[a]) * (x[a] - b.center[a]);
  return std::exp(-r2 / (2.0 * b.width * b.width));
}

/// Gauss-Hermite nodes and weights for int e^{-u^2} g(u) du (Golub-Welsch).
inline std::pair<std::vector<double>, std::vector<double>> gauss_hermite(int n) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) J(i, i - 1) = J(i - 1, i) = std::sqrt(0.5 * i);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  std::vector<double> x(n), w(n);
  for (int i = 0; i < n; ++i) {
    x[i] = es.eigenvalues()(i);
    const double v = es.eigenvectors()(0, i);
    w[i] = std::sqrt(std::numbers::pi) * v * v;
  }
  return {x, w};
}

/// int f(x) g_D(x) dx, g_D the unit-mass centred Gaussian with covariance D.
inline double gaussian_expectation(const TestFunction& f, const Eigen::MatrixXd& D, int nodes = 64) {
  const int d = static_cast<int>(D.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(D);
  if (llt.info() != Eigen::Success || (D - D.transpose()).cwiseAbs().maxCoeff() > 1e-12 * D.cwiseAbs().maxCoeff())
    throw DomainError("gaussian reference: D must be symmetric positive definite");
  if (auto* p = std::get_if<RadialPower>(&f)) {
    const double tr = D.trace();
    if (p->power == 2) return tr;
    if (p->power == 4) return tr * tr + 2.0 * (D * D).trace();
    throw DomainError("gaussian reference: only |x|^2 and |x|^4 are supported");
  }
  if (std::get<GaussianBump>(f).center.size() != std::size_t(d)) throw DomainError("bump center dimension mismatch");
  auto [u, w] = gauss_hermite(nodes);
  const Eigen::MatrixXd C = llt.matrixL();
  std::vector<int> idx(d, 0);
  double sum = 0.0;
  Eigen::VectorXd xi(d), x(d);
  for (;;) {
    double wt = 1.0;
    for (int a = 0; a < d; ++a) {
      xi(a) = std::sqrt(2.0) * u[idx[a]];
      wt *= w[idx[a]];
    }
    x = C * xi;
    sum += wt * evaluate(f, std::span<const double>(x.data(), d));
    int a = 0;
    while (a < d && ++idx[a] == nodes) idx[a++] = 0;
    if (a == d) break;
  }
  return sum / std::pow(std::numbers::pi, 0.5 * d);
}

struct CltResult {
  double lhs;
  double lhs_se;  // linear propagation of per-site errors
  double rhs;
};

inline std::vector<double> scaled_coords(const Lattice& lat, std::size_t x, double t) {
  auto c = lat.coord(x);
  std::vector<double> out(c.size());
  const double s = 1.0 / std::sqrt(t);
  for (std::size_t a = 0; a < c.size(); ++a) out[a] = s * c[a];
  return out;
}

/// Diffusively rescaled functional sum_x f(x / sqrt t) rho_t(x) and its Gaussian limit.
inline CltResult clt_functional(const DensityEstimate& est, const TestFunction& f, double t, const Eigen::MatrixXd& D,
                                bool allow_invalid = false) {
  require_valid(est, allow_invalid, "clt_functional");
  if (!(t > 0.0)) throw DomainError("clt_functional: t must be positive");
  const std::size_t ti = est.time_index(t);
  CltResult r{0.0, 0.0, est.norm2_0 * gaussian_expectation(f, D)};
  for (std::size_t x = 0; x < est.lattice.size(); ++x) {
    const auto y = scaled_coords(est.lattice, x, t);
    const double fx = evaluate(f, y);
    r.lhs += fx * est.mean[ti][x];
    r.lhs_se += std::abs(fx) * est.se[ti][x];
  }
  return r;
}

/// Observable carrying f(x / sqrt t) so its error bar comes from trajectory-level variance.
inline Observable clt_observable(std::string name, TestFunction f) {
  return {std::move(name), [f](double t, std::span<const int> x) -> cplx {
            if (t <= 0.0) return 0.0;
            std::vector<double> y(x.size());
            for (std::size_t a = 0; a < x.size(); ++a) y[a] = x[a] / std::sqrt(t);
            return evaluate(f, y);
          }};
}

inline Observable char_fn_observable(std::string name, ZVec z) {
  return {std::move(name), [z](double, std::span<const int> x) { return plane_weight(z, x); }};
}

inline Observable moment_observable(std::string name, double p) {
  return {std::move(name), [p](double, std::span<const int> x) -> cplx {
            double r2 = 0.0;
            for (int c : x) r2 += double(c) * c;
            return p == 0.0 ? 1.0 : std::pow(r2, 0.5 * p);
          }};
}

// ---------------------------------------------------------------------------
// Characteristic function estimator matched to the torus

/// Kernel conj(h(zeta)) e^{i z.zeta}: evolving e^{iz.x} conj(psi) backwards in
/// time under it reproduces, on the torus, the same quantity the augmented
/// semigroup describes.
inline HoppingKernel gauged_conjugate_kernel(const HoppingKernel& kernel, const ZVec& z) {
  std::vector<HoppingTerm> terms;
  for (const auto& t : kernel.terms()) {
    cplx ph = 0.0;
    for (int a = 0; a < kernel.dim(); ++a) ph += z[a] * double(t.offset[a]);
    terms.push_back({t.offset, std::conj(t.amplitude) * std::exp(cplx(0.0, 1.0) * ph)});
  }
  return HoppingKernel(kernel.dim(), std::move(terms), kernel.m());
}

struct CharFnMonteCarlo {
  std::vector<double> times;
  std::vector<ZVec> z;
  std::size_t n_traj = 0;
  std::vector<std::vector<ScalarEstimate>> twisted;  // [time][z]: torus-consistent estimator
  std::vector<std::vector<ScalarEstimate>> plain;    // [time][z]: sum_x e^{iz.x}|psi_t(x)|^2, minimal image
};

/// Monte Carlo of M_t(z) along exact-event trajectories. Alongside psi, each z
/// carries chi_z with chi_z(0, x) = e^{i z.x} conj psi0(x), evolved with the
/// gauged conjugate kernel and reversed time; the estimator is
/// sum_x psi_t(x) chi_z(t, x). For z on the dual grid of the torus it
/// coincides with the minimal-image sum.
inline CharFnMonteCarlo char_fn_monte_carlo(const WaveFunction& psi0, const EvolutionSpec& spec,
                                            const std::vector<ZVec>& zs, std::size_t n_traj,
                                            std::uint64_t master_seed, unsigned threads = 0, std::size_t block = 16) {
  if (n_traj < 2) throw DomainError("char_fn_monte_carlo: n_traj must be at least 2");
  const Lattice& lat = psi0.lattice;
  for (const auto& z : zs) {
    if (static_cast<int>(z.size()) != lat.dim()) throw DomainError("char_fn_monte_carlo: z dimension mismatch");
    check_strip(z, psi0.profile, "char_fn_monte_carlo");
  }
  const auto times = spec.snapshot_times();
  const std::size_t N = lat.size(), nt = times.size(), nz = zs.size();
  std::vector<HoppingKernel> kz;
  std::vector<std::vector<cplx>> chi0(nz, std::vector<cplx>(N)), phase(nz, std::vector<cplx>(N));
  for (std::size_t j = 0; j < nz; ++j) {
    kz.push_back(gauged_conjugate_kernel(spec.kernel, zs[j]));
    for (std::size_t x = 0; x < N; ++x) {
      phase[j][x] = plane_weight(zs[j], lat.coord(x));
      chi0[j][x] = phase[j][x] * std::conj(psi0.amp[x]);
    }
  }
  const std::size_t len = nt * nz * 4;
  const std::size_t n_blocks = (n_traj + block - 1) / block;
  auto merge = [](Welford& a, const Welford& b) { a.merge(b); };
  OrderedReducer<Welford, decltype(merge)> reducer(merge);

  parallel_for(n_blocks, threads, [&](std::size_t b) {
    Welford acc(len);
    std::vector<double> row(len);
    const std::size_t lo = b * block, hi = std::min(n_traj, lo + block);
    const double h = spec.substep();
    for (std::size_t i = lo; i < hi; ++i) {
      Rng rng(master_seed, i);
      NoiseState noise = sample_invariant(spec.process, lat, rng);
      std::vector<cplx> psi = psi0.amp;
      std::vector<std::vector<cplx>> chi = chi0;
      auto record = [&](std::size_t ti, const std::vector<cplx>& p, const std::vector<std::vector<cplx>>& c) {
        for (std::size_t j = 0; j < nz; ++j) {
          cplx tw = 0.0, pl = 0.0;
          for (std::size_t x = 0; x < N; ++x) {
            tw += p[x] * c[j][x];
            pl += phase[j][x] * std::norm(p[x]);
          }
          double* r = row.data() + (ti * nz + j) * 4;
          r[0] = tw.real();
          r[1] = tw.imag();
          r[2] = pl.real();
          r[3] = pl.imag();
        }
      };
      if (spec.integrator == Integrator::dense) {
        DenseStepper sp(spec.kernel, lat);
        std::vector<DenseStepper> sc;
        for (const auto& k : kz) sc.emplace_back(k, lat);
        detail::drive(
            noise, rng, h, times,
            [&](double d, const PotentialRef& v, bool changed, bool) {
              if (changed) {
                sp.set_potential(v.field);
                for (auto& s : sc) s.set_potential(v.field);
              }
              sp.step(psi.data(), N, d);
              for (std::size_t j = 0; j < nz; ++j) sc[j].step(chi[j].data(), N, -d);
            },
            [&](std::size_t ti) { record(ti, psi, chi); }, nullptr, nullptr);
      } else {
        StrangStepper sp(spec.kernel, lat);
        std::vector<std::unique_ptr<StrangStepper>> sc;
        for (const auto& k : kz) sc.push_back(std::make_unique<StrangStepper>(k, lat));
        sp.load(psi);
        for (std::size_t j = 0; j < nz; ++j) sc[j]->load(chi[j]);
        detail::drive(
            noise, rng, h, times,
            [&](double d, const PotentialRef& v, bool changed, bool rec) {
              sp.step(d, v, changed, rec);
              for (auto& s : sc) s->step(-d, v, changed, rec);
            },
            [&](std::size_t ti) {
              sp.store(psi);
              for (std::size_t j = 0; j < nz; ++j) sc[j]->store(chi[j]);
              record(ti, psi, chi);
            },
            nullptr, nullptr);
      }
      acc.add(row);
    }
    reducer.push(b, std::move(acc));
  });
  Welford all = reducer.finish();

  CharFnMonteCarlo out{times, zs, n_traj, {}, {}};
  out.twisted.assign(nt, std::vector<ScalarEstimate>(nz));
  out.plain.assign(nt, std::vector<ScalarEstimate>(nz));
  for (std::size_t ti = 0; ti < nt; ++ti)
    for (std::size_t j = 0; j < nz; ++j) {
      const std::size_t k = (ti * nz + j) * 4;
      out.twisted[ti][j] = {cplx(all.mean[k], all.mean[k + 1]), all.standard_error(k), all.standard_error(k + 1)};
      out.plain[ti][j] = {cplx(all.mean[k + 2], all.mean[k + 3]), all.standard_error(k + 2), all.standard_error(k + 3)};
    }
  return out;
}

}  // namespace malab
