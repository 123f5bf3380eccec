#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>
#include <unsupported/Eigen/IterativeSolvers>
#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

#include "augmented.hpp"
#include "error.hpp"
#include "noise.hpp"

namespace malab {

inline constexpr std::size_t dense_spectrum_cap = 8192;

/// Region {Re w >= re_min, |Im w| <= slope (Re w + offset)}.
struct Wedge {
  double re_min = 0.0;
  double slope = 0.0;
  double offset = 0.0;

  bool contains(cplx w, double tol = 0.0) const {
    return w.real() >= re_min - tol && std::abs(w.imag()) <= slope * (w.real() + offset) + tol;
  }

  double distance(cplx w) const {
    if (contains(w)) return 0.0;
    const double h = slope * (re_min + offset);
    // vertical edge
    const double yc = std::clamp(w.imag(), -h, h);
    double d = std::abs(w - cplx(re_min, yc));
    // slanted edges from (re_min, +-h) in direction (1, +-slope)
    for (double s : {1.0, -1.0}) {
      const cplx a(re_min, s * h), dir(1.0, s * slope);
      const double u = std::max(0.0, ((w - a) * std::conj(dir)).real() / std::norm(dir));
      d = std::min(d, std::abs(w - (a + u * dir)));
    }
    return d;
  }
};

struct ResolventProbe {
  cplx w;
  double norm = 0.0;      // ||(L - w)^{-1}||
  double distance = 0.0;  // dist(w, {E} u wedge)
};

struct SpectralReport {
  ZVec z;
  std::vector<cplx> spectrum;
  cplx E = 0.0;
  double gap = 0.0;
  Wedge wedge;
  double T = 1.0;
  std::vector<ResolventProbe> probes;

  /// Wedge parameters in the units of the definition: gamma' = T re_min.
  double gamma_prime() const { return T * wedge.re_min; }
  /// Smallest C with norm <= C / distance over the probes.
  double resolvent_constant() const {
    double c = 0.0;
    for (const auto& p : probes) c = std::max(c, p.norm * p.distance);
    return c;
  }
};

namespace detail {

inline double smallest_singular_value(const Eigen::MatrixXcd& A) {
  Eigen::BDCSVD<Eigen::MatrixXcd> svd(A);
  return svd.singularValues().minCoeff();
}

/// Largest singular value via the eigenvalues of A^dagger A.
inline double spectral_norm(const Eigen::MatrixXcd& A) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(A.adjoint() * A, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

/// ||(T - w)^{-1}|| for upper triangular T by power iteration on
/// (T - w)^{-dagger} (T - w)^{-1}, using triangular solves only.
inline double triangular_resolvent_norm(const Eigen::MatrixXcd& T, cplx w, int max_iter = 500) {
  const auto n = T.rows();
  Eigen::MatrixXcd A = T;
  A.diagonal().array() -= w;
  const auto U = A.triangularView<Eigen::Upper>();
  Eigen::VectorXcd x = Eigen::VectorXcd::Ones(n).normalized();
  double s = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXcd y = U.solve(x);
    Eigen::VectorXcd v = U.adjoint().solve(y);
    const double next = std::sqrt(v.norm());
    x = v.normalized();
    if (std::abs(next - s) <= 1e-12 * next) return next;
    s = next;
  }
  return s;
}

}  // namespace detail

/// Full spectrum of L_z, the isolated eigenvalue nearest 0, the gap and a
/// fitted wedge around the rest. Probes the resolvent on |w| = gap/2.
/// `schur_out`, when given, receives the triangular Schur factor for reuse.
inline SpectralReport spectral_report(const AugmentedOperator& op, int n_probes = 16,
                                      std::size_t cap = dense_spectrum_cap, Eigen::MatrixXcd* schur_out = nullptr) {
  if (op.dim() > cap) throw CapacityError("spectral_report: dimension " + std::to_string(op.dim()) +
                                          " exceeds the dense cap " + std::to_string(cap));
  const Eigen::MatrixXcd L(op.L);
  // one Schur form serves the spectrum and every resolvent probe
  Eigen::ComplexSchur<Eigen::MatrixXcd> schur(L, false);
  if (schur.info() != Eigen::Success) throw NumericalError("spectral_report: eigensolver failed");
  const Eigen::MatrixXcd& Tm = schur.matrixT();

  SpectralReport r;
  r.z = op.z;
  r.T = op.process.frozen() ? std::numeric_limits<double>::infinity() : op.process.T();
  const Eigen::VectorXcd ev = Tm.diagonal();
  r.spectrum.assign(ev.data(), ev.data() + ev.size());
  Eigen::Index k = 0;
  ev.cwiseAbs().minCoeff(&k);
  r.E = ev(k);
  r.gap = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (i != k) r.gap = std::min(r.gap, ev(i).real());
  if (!(r.gap > 0.0)) throw NumericalError("spectral_report: no positive gap (min Re of the rest is " +
                                           std::to_string(r.gap) + ")");
  if (std::abs(r.E) >= r.gap / 4)
    throw NumericalError("spectral_report: eigenvalue nearest 0 is not isolated (|E| = " +
                         std::to_string(std::abs(r.E)) + ", gap = " + std::to_string(r.gap) + ")");

  r.wedge.re_min = r.gap;
  r.wedge.offset = r.gap;
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (i != k) r.wedge.slope = std::max(r.wedge.slope, std::abs(ev(i).imag()) / (ev(i).real() + r.wedge.offset));

  const double radius = r.gap / 2;
  for (int j = 0; j < n_probes; ++j) {
    const cplx w = std::polar(radius, 2 * std::numbers::pi * j / n_probes);
    r.probes.push_back({w, detail::triangular_resolvent_norm(Tm, w), std::min(std::abs(w - r.E), r.wedge.distance(w))});
  }
  if (schur_out) *schur_out = Tm;
  return r;
}

struct PerturbedProbe {
  cplx w;
  double norm = 0.0;      // ||(L_z - w)^{-1}||
  double distance = 0.0;  // dist(w, {E(0)} u wedge(0))
  double bound = 0.0;     // C / (distance - C ||L_z - L_0||)
  bool ok = false;
};

/// Resolvent of L_z probed on the circle and sector fitted at z = 0, against
/// the bound implied by the z = 0 constant C through a Neumann series:
/// ||(L_0 - w)^{-1}|| <= C/d gives ||(L_z - w)^{-1}|| <= C/(d - C||L_z - L_0||).
/// Throws when d <= C||L_z - L_0|| at some probe, i.e. z is too large for the
/// bound to say anything. `schur_z` is an upper triangular Schur factor of L_z
/// if one is at hand (see spectral_report); otherwise it is computed.
inline std::vector<PerturbedProbe> perturbed_resolvent_probes(const SpectralReport& ref, const AugmentedOperator& op0,
                                                              const AugmentedOperator& opz,
                                                              std::size_t cap = dense_spectrum_cap,
                                                              const Eigen::MatrixXcd* schur_z = nullptr) {
  if (!(op0.lattice == opz.lattice) || op0.dim() != opz.dim())
    throw DomainError("perturbed_resolvent_probes: operators on different spaces");
  if (opz.dim() > cap) throw CapacityError("perturbed_resolvent_probes: dimension exceeds the dense cap");
  const double C = ref.resolvent_constant();
  const double shift = detail::spectral_norm(Eigen::MatrixXcd(opz.L) - Eigen::MatrixXcd(op0.L));
  for (const auto& p : ref.probes)
    if (!(p.distance - C * shift > 0.0))
      throw DomainError("perturbed_resolvent_probes: ||L_z - L_0|| = " + std::to_string(shift) +
                        " is outside the perturbative neighbourhood");
  Eigen::MatrixXcd T;
  if (schur_z) {
    if (schur_z->rows() != static_cast<Eigen::Index>(opz.dim()) || schur_z->cols() != schur_z->rows())
      throw DomainError("perturbed_resolvent_probes: Schur factor has the wrong size");
  } else {
    Eigen::ComplexSchur<Eigen::MatrixXcd> schur(Eigen::MatrixXcd(opz.L), false);
    if (schur.info() != Eigen::Success) throw NumericalError("perturbed_resolvent_probes: eigensolver failed");
    T = schur.matrixT();
  }
  const Eigen::MatrixXcd& Tz = schur_z ? *schur_z : T;
  std::vector<PerturbedProbe> out;
  for (const auto& p : ref.probes) {
    const double room = p.distance - C * shift;
    PerturbedProbe q;
    q.w = p.w;
    q.norm = detail::triangular_resolvent_norm(Tz, p.w);
    q.distance = p.distance;
    q.bound = C / room;
    q.ok = q.norm <= q.bound * (1 + 1e-9);
    out.push_back(q);
  }
  return out;
}

namespace detail {

/// Block-Jacobi preconditioner over sites: inverts the site-diagonal blocks
/// B + iV_x - sigma exactly, using the structure of B. For the flip model B is
/// a sum of single-site terms, diagonal in a tensor eigenbasis, and iV_x only
/// touches the digits of x and 0; for the resample model B is a rank-one
/// perturbation of a multiple of the identity. The blocks do not depend on z,
/// so one instance serves every operator on the same lattice and process.
class SiteBlocks {
 public:
  using Scalar = cplx;
  using StorageIndex = int;
  enum { ColsAtCompileTime = Eigen::Dynamic, MaxColsAtCompileTime = Eigen::Dynamic };

  SiteBlocks() = default;
  /// With deflate_origin the block of site 0 also carries + u0 u0^dagger.
  SiteBlocks(const AugmentedOperator& op, cplx sigma, bool deflate_origin = false) {
    auto d = std::make_shared<Data>();
    const auto& pr = op.process;
    d->kind = pr.kind();
    d->N = op.lattice.size();
    d->K = pr.values().size();
    d->C = op.configs;
    d->rate = pr.frozen() ? 0.0 : 1.0 / pr.T();
    d->sigma = sigma;
    d->deflate = deflate_origin;
    d->v = pr.values();
    d->pow.resize(d->N);
    std::size_t p = 1;
    for (std::size_t u = 0; u < d->N; ++u, p *= d->K) d->pow[u] = p;
    const auto K = static_cast<Eigen::Index>(d->K);
    Eigen::VectorXd s(K);
    for (Eigen::Index k = 0; k < K; ++k) s(k) = std::sqrt(pr.probs()[k]);

    if (d->kind == NoiseKind::flip) {
      // orthonormal basis with first vector sqrt(nu): eigenvectors of I - s s^T
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(s);
      d->Q = qr.householderQ() * Eigen::MatrixXd::Identity(K, K);
      if (d->Q.col(0).dot(s) < 0) d->Q.col(0) *= -1.0;
      d->nonzero.assign(d->C, 0);
      for (std::size_t c = 0; c < d->C; ++c)
        for (std::size_t u = 0; u < d->N; ++u) d->nonzero[c] += ((c / d->pow[u]) % d->K) != 0;
      const Eigen::MatrixXd single = Eigen::MatrixXd::Identity(K, K) - s * s.transpose();
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(K, K);
      Eigen::MatrixXcd pair = d->rate * (Eigen::kroneckerProduct(single, I) + Eigen::kroneckerProduct(I, single)).eval().cast<cplx>();
      for (Eigen::Index a = 0; a < K; ++a)
        for (Eigen::Index b = 0; b < K; ++b) pair(a * K + b, a * K + b) += cplx(0.0, d->v[a] - d->v[b]);
      d->pair.resize(d->N);
      for (std::size_t x = 1; x < d->N; ++x)
        for (std::size_t n = 0; n + 2 <= d->N; ++n) {
          Eigen::MatrixXcd M = pair;
          M.diagonal().array() += d->rate * double(n) - sigma;
          d->pair[x].emplace_back(M);
        }
    } else {
      d->s = Eigen::VectorXd(static_cast<Eigen::Index>(d->C));
      for (std::size_t c = 0; c < d->C; ++c) d->s(static_cast<Eigen::Index>(c)) = op.sqrt_mu[c];
    }
    data_ = std::move(d);
  }

  template <class M>
  SiteBlocks& analyzePattern(const M&) { return *this; }
  template <class M>
  SiteBlocks& factorize(const M&) { return *this; }
  template <class M>
  SiteBlocks& compute(const M&) { return *this; }

  template <class Rhs>
  Eigen::VectorXcd solve(const Rhs& b) const {
    const Data& d = *data_;
    const auto C = static_cast<Eigen::Index>(d.C);
    Eigen::VectorXcd y(b.rows());
    for (std::size_t x = 0; x < d.N; ++x) {
      Eigen::VectorXcd w = b.segment(static_cast<Eigen::Index>(x) * C, C);
      if (d.kind == NoiseKind::flip)
        flip_block(d, x, w);
      else
        resample_block(d, x, w);
      y.segment(static_cast<Eigen::Index>(x) * C, C) = w;
    }
    return y;
  }
  Eigen::ComputationInfo info() const { return data_ ? Eigen::Success : Eigen::InvalidInput; }

 private:
  struct Data {
    NoiseKind kind = NoiseKind::flip;
    std::size_t N = 0, K = 0, C = 0;
    double rate = 0.0;
    cplx sigma = 0.0;
    bool deflate = false;
    std::vector<double> v;
    std::vector<std::size_t> pow;
    Eigen::MatrixXd Q;
    std::vector<int> nonzero;
    std::vector<std::vector<Eigen::PartialPivLU<Eigen::MatrixXcd>>> pair;  // [x][nonzero digits off {0, x}]
    Eigen::VectorXd s;
  };

  // w <- (M along digit u) w
  static void along_digit(const Data& d, Eigen::VectorXcd& w, std::size_t u, const Eigen::MatrixXd& M) {
    const std::size_t p = d.pow[u], K = d.K;
    Eigen::VectorXcd tmp(static_cast<Eigen::Index>(K));
    for (std::size_t c = 0; c < d.C; ++c) {
      if ((c / p) % K != 0) continue;
      for (std::size_t k = 0; k < K; ++k) tmp(static_cast<Eigen::Index>(k)) = w(static_cast<Eigen::Index>(c + k * p));
      for (std::size_t k = 0; k < K; ++k) {
        cplx acc = 0.0;
        for (std::size_t j = 0; j < K; ++j) acc += M(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) * tmp(static_cast<Eigen::Index>(j));
        w(static_cast<Eigen::Index>(c + k * p)) = acc;
      }
    }
  }

  static void flip_block(const Data& d, std::size_t x, Eigen::VectorXcd& w) {
    const Eigen::MatrixXd Qt = d.Q.transpose();
    for (std::size_t u = 0; u < d.N; ++u)
      if (u != 0 && u != x) along_digit(d, w, u, Qt);
    if (x == 0) {
      along_digit(d, w, 0, Qt);
      for (std::size_t c = 0; c < d.C; ++c) {
        cplx diag = d.rate * double(d.nonzero[c]) - d.sigma;
        if (d.deflate && c == 0) diag += 1.0;
        w(static_cast<Eigen::Index>(c)) /= diag;
      }
      along_digit(d, w, 0, d.Q);
    } else {
      const std::size_t K = d.K, px = d.pow[x], p0 = d.pow[0];
      Eigen::VectorXcd g(static_cast<Eigen::Index>(K * K));
      for (std::size_t c = 0; c < d.C; ++c) {
        if ((c / px) % K != 0 || c % K != 0) continue;
        for (std::size_t a = 0; a < K; ++a)
          for (std::size_t b = 0; b < K; ++b) g(static_cast<Eigen::Index>(a * K + b)) = w(static_cast<Eigen::Index>(c + a * px + b * p0));
        g = d.pair[x][static_cast<std::size_t>(d.nonzero[c])].solve(g);
        for (std::size_t a = 0; a < K; ++a)
          for (std::size_t b = 0; b < K; ++b) w(static_cast<Eigen::Index>(c + a * px + b * p0)) = g(static_cast<Eigen::Index>(a * K + b));
      }
    }
    for (std::size_t u = 0; u < d.N; ++u)
      if (u != 0 && u != x) along_digit(d, w, u, d.Q);
  }

  // (D - beta s s^T)^{-1} by Sherman-Morrison, D = rate - sigma + i V_x
  static void resample_block(const Data& d, std::size_t x, Eigen::VectorXcd& w) {
    const auto C = static_cast<Eigen::Index>(d.C);
    Eigen::VectorXcd dinv(C);
    for (Eigen::Index c = 0; c < C; ++c) {
      const std::size_t cc = static_cast<std::size_t>(c);
      const double v = d.v[(cc / d.pow[x]) % d.K] - d.v[cc % d.K];
      dinv(c) = 1.0 / (d.rate - d.sigma + cplx(0.0, v));
    }
    const double beta = d.rate - ((d.deflate && x == 0) ? 1.0 : 0.0);
    const Eigen::VectorXcd ds = dinv.cwiseProduct(d.s.cast<cplx>());
    w = dinv.cwiseProduct(w);
    const cplx num = d.s.cast<cplx>().transpose() * w;
    const cplx den = 1.0 - beta * cplx(d.s.cast<cplx>().transpose() * ds);
    w += beta * num / den * ds;
  }

  std::shared_ptr<const Data> data_;
};

/// Solver for A y = b: sparse LU up to `direct_cap`, else GMRES with site blocks.
class LinearSolver {
 public:
  LinearSolver(const Eigen::SparseMatrix<cplx>& A, const SiteBlocks* pre, std::size_t direct_cap) {
    if (static_cast<std::size_t>(A.rows()) <= direct_cap || !pre) {
      lu_ = std::make_unique<Eigen::SparseLU<Eigen::SparseMatrix<cplx>>>();
      lu_->compute(A);
      if (lu_->info() != Eigen::Success) throw NumericalError("linear solve: factorization failed");
    } else {
      gmres_ = std::make_unique<Eigen::GMRES<Eigen::SparseMatrix<cplx>, SiteBlocks>>();
      gmres_->preconditioner() = *pre;
      gmres_->set_restart(400);
      gmres_->setMaxIterations(20000);
      gmres_->setTolerance(1e-13);
      gmres_->compute(A);
    }
  }

  Eigen::VectorXcd solve(const Eigen::VectorXcd& b, const Eigen::VectorXcd* guess = nullptr) const {
    if (lu_) return lu_->solve(b);
    Eigen::VectorXcd x = guess ? gmres_->solveWithGuess(b, *guess) : Eigen::VectorXcd(gmres_->solve(b));
    if (gmres_->info() != Eigen::Success)
      throw NumericalError("linear solve: GMRES did not converge (estimated error " +
                           std::to_string(gmres_->error()) + ")");
    return x;
  }

 private:
  std::unique_ptr<Eigen::SparseLU<Eigen::SparseMatrix<cplx>>> lu_;
  std::unique_ptr<Eigen::GMRES<Eigen::SparseMatrix<cplx>, SiteBlocks>> gmres_;
};

}  // namespace detail

/// Dimension up to which linear solves use a sparse LU factorization.
inline constexpr std::size_t direct_solve_cap = 1024;

/// Shift used for E(z): a little left of 0 in units of 1/T.
inline double eigen_shift(const NoiseProcess& process) {
  return -1e-3 / (process.frozen() ? 1.0 : process.T());
}

/// E(z) by shift-invert iteration started from delta_0 (x) 1. Pass a
/// preconditioner built for the same lattice and process with
/// eigen_shift(process) to reuse it across z.
inline cplx leading_eigenvalue(const AugmentedOperator& op, const detail::SiteBlocks* pre = nullptr,
                               std::size_t direct_cap = direct_solve_cap) {
  const cplx sigma = eigen_shift(op.process);
  std::optional<detail::SiteBlocks> own;
  if (!pre && op.dim() > direct_cap) pre = &own.emplace(op, sigma);
  Eigen::SparseMatrix<cplx> S = op.L;
  for (Eigen::Index i = 0; i < S.rows(); ++i) S.coeffRef(i, i) -= sigma;
  S.makeCompressed();
  const detail::LinearSolver solver(S, pre, direct_cap);

  Eigen::VectorXcd x = op.site_vector(0).normalized();
  cplx lambda = x.dot(op.L * x), prev = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 60; ++it) {
    const Eigen::VectorXcd guess = x / (lambda - sigma);
    Eigen::VectorXcd y = solver.solve(x, &guess);
    lambda = sigma + 1.0 / x.dot(y);
    x = y.normalized();
    if (it >= 1 && std::abs(lambda - prev) <= 1e-14 * std::max(1.0, std::abs(lambda))) break;
    prev = lambda;
  }
  // Rayleigh quotient of the converged vector
  return x.dot(op.L * x);
}

enum class DiffusionMethod { formula, hessian };

inline const char* to_string(DiffusionMethod m) { return m == DiffusionMethod::formula ? "formula" : "hessian"; }

struct DiffusionMatrix {
  Eigen::MatrixXd D;
  DiffusionMethod method = DiffusionMethod::formula;
  double imag_part = 0.0;          // largest |Im| discarded
  double asymmetry = 0.0;          // max |D - D^T|
  double min_eigenvalue = 0.0;
  Eigen::VectorXcd gradient;       // hessian method: central differences of E at 0
  double richardson_delta = 0.0;   // hessian method: max |H(h) - H(h/2)|
  bool positive_definite() const { return min_eigenvalue > 0.0; }
};

namespace detail {

inline void finish_diffusion(DiffusionMatrix& out, const Eigen::MatrixXcd& H) {
  out.imag_part = H.imag().cwiseAbs().maxCoeff();
  out.D = H.real();
  out.asymmetry = (out.D - out.D.transpose()).cwiseAbs().maxCoeff();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (out.D + out.D.transpose()));
  out.min_eigenvalue = es.eigenvalues().minCoeff();
}

}  // namespace detail

/// D from the restricted inverse of L_0 (formula) or as the Hessian of E at 0.
inline DiffusionMatrix diffusion_matrix(const HoppingKernel& kernel, const NoiseProcess& process,
                                        const Lattice& lattice, DiffusionMethod method, double h = 1e-3,
                                        std::size_t direct_cap = direct_solve_cap) {
  const int d = lattice.dim();
  DiffusionMatrix out;
  out.method = method;
  const ZVec zero(d, 0.0);
  const auto op0 = build_augmented(kernel, process, lattice, zero);

  if (method == DiffusionMethod::formula) {
    const auto n = static_cast<Eigen::Index>(op0.dim());
    const Eigen::VectorXcd u0 = op0.site_vector(0);
    const auto& terms = kernel.terms();
    std::vector<Eigen::VectorXcd> u(terms.size()), x(terms.size());
    for (std::size_t k = 0; k < terms.size(); ++k) u[k] = op0.site_vector(lattice.index(terms[k].offset));

    if (op0.dim() <= direct_cap) {
      // bordered system [[L, u0], [u0^dagger, 0]]: solutions stay orthogonal to u0
      std::vector<Eigen::Triplet<cplx>> trip;
      trip.reserve(static_cast<std::size_t>(op0.L.nonZeros() + 2 * n));
      for (int k = 0; k < op0.L.outerSize(); ++k)
        for (Eigen::SparseMatrix<cplx>::InnerIterator it(op0.L, k); it; ++it)
          trip.emplace_back(it.row(), it.col(), it.value());
      for (Eigen::Index i = 0; i < n; ++i)
        if (u0(i) != 0.0) {
          trip.emplace_back(i, n, u0(i));
          trip.emplace_back(n, i, std::conj(u0(i)));
        }
      Eigen::SparseMatrix<cplx> M(n + 1, n + 1);
      M.setFromTriplets(trip.begin(), trip.end());
      M.makeCompressed();
      const detail::LinearSolver solver(M, nullptr, direct_cap);
      for (std::size_t k = 0; k < terms.size(); ++k) {
        Eigen::VectorXcd rhs = Eigen::VectorXcd::Zero(n + 1);
        rhs.head(n) = u[k];
        Eigen::VectorXcd sol = solver.solve(rhs);
        if (!sol.allFinite()) throw NumericalError("diffusion_matrix: singular deflated solve (no gap?)");
        x[k] = sol.head(n);
      }
    } else {
      // L + u0 u0^dagger agrees with L on the complement of u0 and is invertible
      // there; the rank-one block sits inside the site-0 preconditioner block
      Eigen::SparseMatrix<cplx> M = op0.L;
      const auto C = static_cast<Eigen::Index>(op0.configs);
      for (Eigen::Index i = 0; i < C; ++i)
        for (Eigen::Index j = 0; j < C; ++j) M.coeffRef(i, j) += u0(i) * std::conj(u0(j));
      M.makeCompressed();
      const detail::SiteBlocks pre(op0, 0.0, true);
      const detail::LinearSolver solver(M, &pre, direct_cap);
      for (std::size_t k = 0; k < terms.size(); ++k) x[k] = solver.solve(u[k]);
    }
    // E(z) ~ z.S z with S_ij = sum zeta_i zeta'_j conj h(zeta) h(zeta') <delta_zeta, R delta_zeta'>
    Eigen::MatrixXcd S = Eigen::MatrixXcd::Zero(d, d);
    for (std::size_t a = 0; a < terms.size(); ++a)
      for (std::size_t b = 0; b < terms.size(); ++b) {
        const cplx g = std::conj(terms[a].amplitude) * terms[b].amplitude * u[a].dot(x[b]);
        for (int i = 0; i < d; ++i)
          for (int j = 0; j < d; ++j) S(i, j) += double(terms[a].offset[i]) * double(terms[b].offset[j]) * g;
      }
    detail::finish_diffusion(out, S + S.transpose());
    return out;
  }

  std::optional<detail::SiteBlocks> pre;
  if (op0.dim() > direct_cap) pre.emplace(op0, eigen_shift(process));
  const detail::SiteBlocks* pp = pre ? &*pre : nullptr;
  auto E = [&](const std::vector<double>& dir, double s) {
    ZVec z(d);
    for (int a = 0; a < d; ++a) z[a] = s * dir[a];
    return leading_eigenvalue(build_augmented(kernel, process, lattice, z), pp, direct_cap);
  };
  const cplx E0 = leading_eigenvalue(op0, pp, direct_cap);
  auto hessian = [&](double step) {
    std::vector<cplx> diag2(d);
    Eigen::MatrixXcd H(d, d);
    for (int i = 0; i < d; ++i) {
      std::vector<double> e(d, 0.0);
      e[i] = 1.0;
      const cplx p = E(e, step), m = E(e, -step);
      if (step == h) out.gradient(i) = (p - m) / (2 * step);
      diag2[i] = p + m;
      H(i, i) = (diag2[i] - 2.0 * E0) / (step * step);
    }
    for (int i = 0; i < d; ++i)
      for (int j = i + 1; j < d; ++j) {
        std::vector<double> e(d, 0.0);
        e[i] = e[j] = 1.0;
        const cplx s = E(e, step) + E(e, -step);
        H(i, j) = H(j, i) = (s - diag2[i] - diag2[j] + 2.0 * E0) / (2 * step * step);
      }
    return H;
  };
  out.gradient.resize(d);
  const Eigen::MatrixXcd H1 = hessian(h);
  const Eigen::MatrixXcd H2 = hessian(h / 2);
  out.richardson_delta = (H1 - H2).cwiseAbs().maxCoeff();
  detail::finish_diffusion(out, (4.0 * H2 - H1) / 3.0);
  return out;
}

/// alpha(y) = sum_zeta |h(zeta)| |sinh(y.zeta)|.
inline double growth_rate(const HoppingKernel& kernel, const std::vector<double>& y) {
  double a = 0.0;
  for (const auto& t : kernel.terms()) {
    double s = 0.0;
    for (int i = 0; i < kernel.dim(); ++i) s += y[i] * double(t.offset[i]);
    a += std::abs(t.amplitude) * std::abs(std::sinh(s));
  }
  return a;
}

struct GrowthRow {
  double t = 0.0;
  double norm = 0.0;   // ||e^{-tL_z}||
  double bound = 0.0;  // e^{t alpha(Im z)}
  bool ok = false;
};

struct GrowthReport {
  double alpha = 0.0;
  std::vector<GrowthRow> rows;
  bool ok() const {
    return std::all_of(rows.begin(), rows.end(), [](const GrowthRow& r) { return r.ok; });
  }
};

/// Spectral norm of the semigroup against e^{t alpha(y)}; the slack 1e-12
/// covers the dense exponential.
inline GrowthReport semigroup_growth_check(const AugmentedOperator& op, const std::vector<double>& times,
                                           std::size_t cap = dense_expm_cap) {
  if (op.dim() > cap) throw CapacityError("semigroup_growth_check: dimension exceeds the dense cap");
  std::vector<double> y(op.z.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = op.z[i].imag();
  GrowthReport rep;
  rep.alpha = growth_rate(op.kernel, y);
  const Eigen::MatrixXcd L(op.L);
  for (double t : times) {
    if (!(t >= 0.0)) throw DomainError("semigroup_growth_check: times must be non-negative");
    const double norm = detail::spectral_norm((L * (-t)).exp());
    const double bound = std::exp(t * rep.alpha);
    rep.rows.push_back({t, norm, bound, norm <= bound * (1 + 1e-12)});
  }
  return rep;
}

/// Lower bound 1/(1 + phi^2) on the spectral gap (in units of delta) of a
/// block operator [[0, -W^dagger], [W, A]] with Re A >= delta and
/// ||A^{-1} W f|| >= alpha ||W|| / delta ||f||.
inline double abstract_gap_bound(double delta, double w_norm, double alpha) {
  if (!(delta > 0.0)) throw DomainError("abstract_gap_bound: delta must be positive");
  if (!(w_norm > 0.0)) throw DomainError("abstract_gap_bound: ||W|| must be positive");
  if (!(alpha > 0.0)) throw DomainError("abstract_gap_bound: alpha must be positive");
  if (alpha > 1.0) throw DomainError("abstract_gap_bound: alpha > 1 is impossible for an accretive block");
  const double phi = (2 * delta / w_norm + 9.0 / 8.0 * w_norm / delta) / alpha;
  return 1.0 / (1.0 + phi * phi);
}

struct GapCertificate {
  double delta = 0.0;         // gap of B
  double w_norm = 0.0;        // ||W||, W = iV from (P_0 - Q_0)H into H_1
  double alpha_block = 0.0;   // from the singular values of (P_1 L_0 P_1)^{-1} W
  double alpha_markov = 0.0;  // from the singular values of B^{-1} W
  double bound_block = 0.0;   // abstract_gap_bound(delta, w_norm, alpha_block) * delta
  double bound_markov = 0.0;
  double gap = 0.0;           // numerically computed gap of L_0 on the complement of delta_0 (x) 1
  bool ok() const { return gap > 0.0 && gap >= bound_block && gap >= bound_markov; }
};

/// Certificate for the gap of L_0 from the abstract block-operator bound, evaluated
/// with two choices of alpha. Requires z = 0.
inline GapCertificate gap_certificate(const AugmentedOperator& op, double numerical_gap) {
  for (auto c : op.z)
    if (c != 0.0) throw DomainError("gap_certificate: operator must be built at z = 0");
  const std::size_t N = op.lattice.size();
  if (N < 2) throw DomainError("gap_certificate: need at least two sites");
  const auto n = static_cast<Eigen::Index>(op.dim());
  GapCertificate g;
  g.delta = generator_report(op.process, op.lattice, op.configs).gap;
  g.gap = numerical_gap;

  // columns W u_x for x != 0, with u_x orthonormal in (P_0 - Q_0)H
  std::vector<Eigen::VectorXcd> u(N);
  for (std::size_t x = 0; x < N; ++x) u[x] = op.site_vector(x);
  Eigen::MatrixXcd W(n, static_cast<Eigen::Index>(N - 1));
  for (std::size_t x = 1; x < N; ++x) W.col(static_cast<Eigen::Index>(x - 1)) = cplx(0.0, 1.0) * (op.V * u[x]);
  {
    Eigen::BDCSVD<Eigen::MatrixXcd> svd(W);
    g.w_norm = svd.singularValues().maxCoeff();
  }

  // A^{-1} on H_1 for A in {P_1 L_0 P_1, B}: bordered with all of P_0
  auto restricted_solve = [&](const Eigen::SparseMatrix<cplx>& A) {
    std::vector<Eigen::Triplet<cplx>> trip;
    for (int k = 0; k < A.outerSize(); ++k)
      for (Eigen::SparseMatrix<cplx>::InnerIterator it(A, k); it; ++it) trip.emplace_back(it.row(), it.col(), it.value());
    for (std::size_t x = 0; x < N; ++x)
      for (Eigen::Index i = 0; i < n; ++i)
        if (u[x](i) != 0.0) {
          trip.emplace_back(i, n + static_cast<Eigen::Index>(x), u[x](i));
          trip.emplace_back(n + static_cast<Eigen::Index>(x), i, std::conj(u[x](i)));
        }
    const auto m = n + static_cast<Eigen::Index>(N);
    Eigen::SparseMatrix<cplx> M(m, m);
    M.setFromTriplets(trip.begin(), trip.end());
    M.makeCompressed();
    Eigen::SparseLU<Eigen::SparseMatrix<cplx>> lu;
    lu.compute(M);
    if (lu.info() != Eigen::Success) throw NumericalError("gap_certificate: singular restricted solve");
    Eigen::MatrixXcd rhs = Eigen::MatrixXcd::Zero(m, W.cols());
    rhs.topRows(n) = W;
    Eigen::MatrixXcd X = lu.solve(rhs);
    return Eigen::MatrixXcd(X.topRows(n));
  };
  g.alpha_block = g.delta * detail::smallest_singular_value(restricted_solve(op.L)) / g.w_norm;
  g.alpha_markov = g.delta * detail::smallest_singular_value(restricted_solve(op.B)) / g.w_norm;
  // both are at most 1 in exact arithmetic; clip rounding above it
  for (double* a : {&g.alpha_block, &g.alpha_markov}) {
    if (*a > 1.0 + 1e-9) throw NumericalError("gap_certificate: alpha exceeds 1 (" + std::to_string(*a) + ")");
    *a = std::min(*a, 1.0);
  }
  g.bound_block = abstract_gap_bound(g.delta, g.w_norm, g.alpha_block) * g.delta;
  g.bound_markov = abstract_gap_bound(g.delta, g.w_norm, g.alpha_markov) * g.delta;
  return g;
}

}  // namespace malab
