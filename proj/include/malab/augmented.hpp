#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <unsupported/Eigen/MatrixFunctions>

#include "ensemble.hpp"
#include "error.hpp"
#include "lattice.hpp"
#include "noise.hpp"

namespace malab {

/// The generator iK_z + iV + B on l^2(sites) (x) L^2(mu), written in the
/// orthonormal basis e_{x,c} = delta_x (x) 1_c / sqrt(mu(c)). Index x*C + c.
struct AugmentedOperator {
  Lattice lattice;
  HoppingKernel kernel;
  NoiseProcess process;
  ZVec z;
  std::size_t configs = 0;
  std::vector<double> sqrt_mu;
  Eigen::SparseMatrix<cplx> K;  // twisted hopping K_z
  Eigen::SparseMatrix<cplx> V;  // v_x - v_0, diagonal
  Eigen::SparseMatrix<cplx> B;  // Markov generator
  Eigen::SparseMatrix<cplx> L;  // iK + iV + B

  std::size_t dim() const { return lattice.size() * configs; }
  std::size_t index(std::size_t site, std::size_t config) const { return site * configs + config; }

  /// delta_x (x) 1 in the orthonormal coordinates.
  Eigen::VectorXcd site_vector(std::size_t site) const {
    Eigen::VectorXcd u = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(dim()));
    for (std::size_t c = 0; c < configs; ++c) u(static_cast<Eigen::Index>(index(site, c))) = sqrt_mu[c];
    return u;
  }

  /// P_0 as a dense matrix: orthogonal projection onto l^2 (x) 1.
  Eigen::MatrixXcd p0() const {
    const auto n = static_cast<Eigen::Index>(dim());
    Eigen::MatrixXcd P = Eigen::MatrixXcd::Zero(n, n);
    for (std::size_t x = 0; x < lattice.size(); ++x) {
      auto u = site_vector(x);
      P += u * u.adjoint();
    }
    return P;
  }
};

inline constexpr std::size_t augmented_config_cap = std::size_t{1} << 12;

inline AugmentedOperator build_augmented(const HoppingKernel& kernel, const NoiseProcess& process,
                                         const Lattice& lattice, const ZVec& z,
                                         std::size_t cap = augmented_config_cap) {
  if (!process.is_jump()) throw UnsupportedError("augmented operator: Brownian model unsupported");
  if (static_cast<int>(z.size()) != lattice.dim()) throw DomainError("augmented operator: z dimension mismatch");
  kernel.check_fits(lattice);
  ConfigSpace cs(process, lattice, cap);
  for (std::size_t s = 0; s < cs.radix(); ++s)
    if (!(cs.prob_value(s) > 0.0)) throw DomainError("augmented operator: nu must charge every value of its support");

  AugmentedOperator op;
  op.lattice = lattice;
  op.kernel = kernel;
  op.process = process;
  op.z = z;
  op.configs = cs.count();
  const std::size_t N = lattice.size(), C = cs.count();
  const auto n = static_cast<Eigen::Index>(N * C);
  op.sqrt_mu.resize(C);
  for (std::size_t c = 0; c < C; ++c) op.sqrt_mu[c] = std::sqrt(cs.mu(c));

  // phi(x - zeta, sigma_zeta c) for each kernel term
  std::vector<Eigen::Triplet<cplx>> kt;
  kt.reserve(2 * N * C * kernel.terms().size());
  for (const auto& term : kernel.terms()) {
    cplx ph = 0.0;
    for (int a = 0; a < lattice.dim(); ++a) ph += z[a] * double(term.offset[a]);
    const cplx twist = -std::exp(cplx(0.0, -1.0) * ph) * term.amplitude;
    std::vector<int> back(term.offset);
    for (auto& b : back) b = -b;
    std::vector<std::size_t> moved(C);
    for (std::size_t c = 0; c < C; ++c) moved[c] = cs.shift(c, term.offset);
    for (std::size_t x = 0; x < N; ++x) {
      const std::size_t src = lattice.shift(x, back);
      for (std::size_t c = 0; c < C; ++c) {
        kt.emplace_back(op.index(x, c), op.index(src, c), term.amplitude);
        kt.emplace_back(op.index(x, c), op.index(src, moved[c]), twist);
      }
    }
  }
  op.K.resize(n, n);
  op.K.setFromTriplets(kt.begin(), kt.end());

  std::vector<Eigen::Triplet<cplx>> vt;
  vt.reserve(N * C);
  for (std::size_t x = 0; x < N; ++x)
    for (std::size_t c = 0; c < C; ++c) {
      const double v = cs.value(c, x) - cs.value(c, 0);
      if (v != 0.0) vt.emplace_back(op.index(x, c), op.index(x, c), v);
    }
  op.V.resize(n, n);
  op.V.setFromTriplets(vt.begin(), vt.end());

  // B' = S B S^{-1}, S = diag sqrt(mu), repeated on every site
  Eigen::SparseMatrix<double> Bc = generator_matrix(process, lattice, cap);
  std::vector<Eigen::Triplet<cplx>> bt;
  bt.reserve(N * static_cast<std::size_t>(Bc.nonZeros()));
  for (int k = 0; k < Bc.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(Bc, k); it; ++it) {
      const auto r = static_cast<std::size_t>(it.row()), c = static_cast<std::size_t>(it.col());
      const double w = it.value() * op.sqrt_mu[r] / op.sqrt_mu[c];
      for (std::size_t x = 0; x < N; ++x) bt.emplace_back(op.index(x, r), op.index(x, c), w);
    }
  op.B.resize(n, n);
  op.B.setFromTriplets(bt.begin(), bt.end());

  const cplx I(0.0, 1.0);
  op.L = I * op.K + I * op.V + op.B;
  op.L.makeCompressed();
  return op;
}

/// rho_z(x) = sum_y e^{i z.y} psi0(x + y) conj(psi0(y)), y on minimal-image coordinates.
inline std::vector<cplx> rho_hat(const WaveFunction& psi0, const ZVec& z) {
  const Lattice& lat = psi0.lattice;
  if (static_cast<int>(z.size()) != lat.dim()) throw DomainError("rho_hat: z dimension mismatch");
  check_strip(z, psi0.profile, "rho_hat");
  const std::size_t N = lat.size();
  std::vector<std::size_t> nz;
  for (std::size_t y = 0; y < N; ++y)
    if (psi0.amp[y] != 0.0) nz.push_back(y);
  std::vector<cplx> out(N, 0.0);
  for (std::size_t x = 0; x < N; ++x) {
    auto cx = lat.coord(x);
    cplx s = 0.0;
    for (std::size_t y : nz) {
      const std::size_t xy = lat.shift(y, cx);
      s += plane_weight(z, lat.coord(y)) * psi0.amp[xy] * std::conj(psi0.amp[y]);
    }
    out[x] = s;
  }
  return out;
}

/// Largest dimension handled with a dense matrix exponential.
inline constexpr std::size_t dense_expm_cap = 2048;

namespace detail {

/// e^{-tA} b by Taylor series on s equal substeps with ||tA/s||_1 <= 1.
inline Eigen::VectorXcd expmv(const Eigen::SparseMatrix<cplx>& A, double t, Eigen::VectorXcd b) {
  double norm1 = 0.0;
  for (int k = 0; k < A.outerSize(); ++k) {
    double col = 0.0;
    for (Eigen::SparseMatrix<cplx>::InnerIterator it(A, k); it; ++it) col += std::abs(it.value());
    norm1 = std::max(norm1, col);
  }
  const int s = std::max(1, static_cast<int>(std::ceil(std::abs(t) * norm1)));
  const double h = t / s;
  for (int i = 0; i < s; ++i) {
    Eigen::VectorXcd term = b, sum = b;
    for (int k = 1; k < 60; ++k) {
      term = (A * term) * (-h / k);
      sum += term;
      if (term.norm() <= 1e-17 * sum.norm()) break;
    }
    b = std::move(sum);
  }
  return b;
}

inline Eigen::VectorXcd semigroup_apply(const AugmentedOperator& op, double t, const Eigen::VectorXcd& b) {
  if (op.dim() <= dense_expm_cap) {
    Eigen::MatrixXcd E = (Eigen::MatrixXcd(op.L) * (-t)).exp();
    return E * b;
  }
  return expmv(op.L, t, b);
}

}  // namespace detail

/// <delta_0 (x) 1, e^{-tL_z} (rho_z (x) 1)>.
inline cplx fkp_element(const AugmentedOperator& op, double t, const WaveFunction& psi0) {
  if (!(t >= 0.0)) throw DomainError("fkp_element: t must be non-negative");
  if (!(psi0.lattice == op.lattice)) throw DomainError("fkp_element: lattice mismatch");
  const auto rho = rho_hat(psi0, op.z);
  Eigen::VectorXcd b = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(op.dim()));
  for (std::size_t x = 0; x < op.lattice.size(); ++x)
    if (rho[x] != 0.0) b += rho[x] * op.site_vector(x);
  if (t == 0.0) return op.site_vector(0).dot(b);
  return op.site_vector(0).dot(detail::semigroup_apply(op, t, b));
}

struct BlockCheck {
  double kernel_right = 0.0;  // ||L_0 (delta_0 (x) 1)||
  double kernel_left = 0.0;   // ||L_0^dagger (delta_0 (x) 1)||
  double p0vp0 = 0.0;         // max |entry| of P_0 V P_0
  double p0kp0 = 0.0;         // max deviation of P_0 K_z P_0 from the scalar stencil
};

/// Kernel vector and block identities of the generator. The kernel norms are
/// only meaningful at z = 0.
inline BlockCheck block_check(const AugmentedOperator& op) {
  BlockCheck r;
  const auto u0 = op.site_vector(0);
  r.kernel_right = (op.L * u0).norm();
  r.kernel_left = (Eigen::SparseMatrix<cplx>(op.L.adjoint()) * u0).norm();

  const std::size_t N = op.lattice.size();
  std::vector<Eigen::VectorXcd> u;
  for (std::size_t x = 0; x < N; ++x) u.push_back(op.site_vector(x));
  // stencil sum_zeta h(zeta)(1 - e^{-iz.zeta}) f(x - zeta) on l^2
  Eigen::MatrixXcd stencil = Eigen::MatrixXcd::Zero(N, N);
  for (const auto& term : op.kernel.terms()) {
    cplx ph = 0.0;
    for (int a = 0; a < op.lattice.dim(); ++a) ph += op.z[a] * double(term.offset[a]);
    const cplx coef = term.amplitude * (1.0 - std::exp(cplx(0.0, -1.0) * ph));
    std::vector<int> back(term.offset);
    for (auto& b : back) b = -b;
    for (std::size_t x = 0; x < N; ++x) stencil(x, op.lattice.shift(x, back)) += coef;
  }
  for (std::size_t y = 0; y < N; ++y) {
    const Eigen::VectorXcd Vu = op.V * u[y], Ku = op.K * u[y];
    for (std::size_t x = 0; x < N; ++x) {
      r.p0vp0 = std::max(r.p0vp0, std::abs(u[x].dot(Vu)));
      r.p0kp0 = std::max(r.p0kp0, std::abs(u[x].dot(Ku) - stencil(x, y)));
    }
  }
  return r;
}

}  // namespace malab
