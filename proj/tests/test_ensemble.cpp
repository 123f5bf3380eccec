#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "malab/ensemble.hpp"
#include "malab/fft.hpp"

using namespace malab;

namespace {

EvolutionSpec flip_spec(double t, std::vector<double> snaps, Integrator integ = Integrator::strang) {
  EvolutionSpec s;
  s.kernel = HoppingKernel::laplacian(1);
  s.process = NoiseProcess(FlipProcess{1.0, 0.5});
  s.t_final = t;
  s.snapshots = std::move(snaps);
  s.integrator = integ;
  return s;
}

EvolutionSpec free_spec(double t, std::vector<double> snaps) {
  auto s = flip_spec(t, std::move(snaps), Integrator::dense);
  s.process = NoiseProcess(ResampleProcess{1.0, {{0.0, 1.0}}}, true);
  return s;
}

double bessel_sq(int x, double t) {
  const double j = std::cyl_bessel_j(double(std::abs(x)), 2 * t);
  return j * j;
}

}  // namespace

TEST(Ensemble, DegenerateSampleHasZeroError) {
  Lattice lat({16});
  EnsembleOptions opt;
  opt.same_stream = true;
  auto est = run_ensemble(WaveFunction::delta(lat), flip_spec(1.0, {}), 2, 5, opt);
  for (double e : est.se.back()) EXPECT_EQ(e, 0.0);
}

TEST(Ensemble, FreeEvolutionIsExact) {
  Lattice lat({32});
  auto est = run_ensemble(WaveFunction::delta(lat), free_spec(2.0, {1.0, 2.0}), 4, 1);
  for (std::size_t x = 0; x < lat.size(); ++x) {
    EXPECT_EQ(est.se[1][x], 0.0);
    EXPECT_NEAR(est.mean[1][x], bessel_sq(lat.coord(x)[0], 2.0), 1e-10);
  }
}

TEST(Ensemble, DeterministicAcrossThreadCounts) {
  Lattice lat({24});
  auto spec = flip_spec(1.5, {0.5, 1.5});
  EnsembleOptions one, three;
  one.threads = 1;
  three.threads = 3;
  three.block = one.block = 4;
  auto a = run_ensemble(WaveFunction::delta(lat), spec, 37, 11, one);
  auto b = run_ensemble(WaveFunction::delta(lat), spec, 37, 11, three);
  auto c = run_ensemble(WaveFunction::delta(lat), spec, 37, 11, one);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.se, b.se);
  EXPECT_EQ(a.mean, c.mean);
}

TEST(Ensemble, Normalization) {
  Lattice lat({32});
  auto psi0 = WaveFunction::exponential(lat, 0.5, 1.0);
  auto est = run_ensemble(psi0, flip_spec(2.0, {0.0, 1.0, 2.0}), 40, 2);
  for (const auto& row : est.mean) {
    double s = 0;
    for (double v : row) s += v;
    EXPECT_NEAR(s, psi0.norm2(), 1e-9);
  }
}

TEST(Moments, NormalizationBallisticAndOrigin) {
  Lattice lat({96});
  const double t = 3.0;
  auto est = run_ensemble(WaveFunction::delta(lat), free_spec(t, {0.0, t}), 2, 3);
  auto m = moments(est, {0.0, 2.0, 4.0});
  EXPECT_NEAR(m.value[0][0], 1.0, 1e-14);
  EXPECT_NEAR(m.value[1][0], 1.0, 1e-9);
  EXPECT_EQ(m.value[0][1], 0.0);
  EXPECT_EQ(m.value[0][2], 0.0);
  EXPECT_NEAR(m.value[1][1], 2 * t * t, 1e-6);
}

TEST(Moments, RejectInvalid) {
  Lattice lat({8});
  auto est = run_ensemble(WaveFunction::delta(lat), free_spec(3.0, {}), 2, 3);
  EXPECT_FALSE(est.valid);
  EXPECT_THROW(moments(est, {2.0}), DomainError);
}

TEST(CharFn, Definitions) {
  Lattice lat({48});
  auto psi0 = WaveFunction::exponential(lat, 0.6, 1.0);
  auto est = run_ensemble(psi0, flip_spec(1.0, {}), 20, 4);
  auto m0 = char_fn(est, 0, {0.0});
  EXPECT_NEAR(std::abs(m0.mean - psi0.norm2()), 0.0, 1e-9);

  const double lam = 0.3;
  auto mi = char_fn(est, 0, {cplx(0, lam)});
  double direct = 0;
  for (std::size_t x = 0; x < lat.size(); ++x) direct += std::exp(-lam * lat.coord(x)[0]) * est.mean[0][x];
  EXPECT_NEAR(std::abs(mi.mean - direct), 0.0, 1e-12 * direct);

  for (double k : {0.3, 1.1, 2.5}) {
    auto p = char_fn(est, 0, {k});
    auto q = char_fn(est, 0, {-k});
    EXPECT_EQ(p.mean, std::conj(q.mean));
    EXPECT_LE(std::abs(p.mean), psi0.norm2() + 3 * p.se());
  }
  EXPECT_THROW(char_fn(est, 0, {cplx(0, 0.6)}), DomainError);
}

TEST(CharFn, FreeOracle) {
  Lattice lat({64});
  const double t = 2.0;
  auto est = run_ensemble(WaveFunction::delta(lat), free_spec(t, {}), 2, 1);
  for (double k : {0.4, 1.3}) {
    cplx ref = 0;
    for (int x = -31; x <= 32; ++x) ref += std::polar(bessel_sq(x, t), k * x);
    EXPECT_NEAR(std::abs(char_fn(est, 0, {k}).mean - ref), 0.0, 1e-9);
  }
}

TEST(CharFn, InverseDftRecoversDensity) {
  Lattice lat({20});
  auto est = run_ensemble(WaveFunction::delta(lat), flip_spec(1.0, {}), 10, 6);
  // M on the dual grid k_n = 2 pi n / L, then invert
  std::vector<cplx> M(lat.size());
  for (std::size_t n = 0; n < lat.size(); ++n) M[n] = char_fn(est, 0, {2 * std::numbers::pi * double(n) / 20.0}).mean;
  auto fft = FourierTransform::for_extent(lat.extent());
  fft->forward(M.data());  // sum_k e^{-ikx} M(k) = L rho(x)
  for (std::size_t x = 0; x < lat.size(); ++x) EXPECT_NEAR(std::abs(M[x] / 20.0 - est.mean[0][x]), 0.0, 1e-12);
}

TEST(Ensemble, StandardErrorScaling) {
  Lattice lat({32});
  auto spec = flip_spec(1.0, {});
  EnsembleOptions opt;
  opt.observables.push_back(moment_observable("m2", 2));
  auto a = run_ensemble(WaveFunction::delta(lat), spec, 400, 7, opt);
  auto b = run_ensemble(WaveFunction::delta(lat), spec, 1600, 8, opt);
  const double ratio = a.observables[0][0].se_re / b.observables[0][0].se_re;
  EXPECT_NEAR(ratio, 2.0, 0.4);
}

TEST(ExpMoments, BoundsHold) {
  Lattice lat({48});
  const double mu = 0.4;
  auto psi0 = WaveFunction::exponential(lat, mu, 1.0);
  auto est = run_ensemble(psi0, flip_spec(2.0, {0.0, 0.5, 1.0, 2.0}, Integrator::dense), 50, 9);
  auto rep = exp_moment_check(est, 0.2, HoppingKernel::laplacian(1), 1.0);
  EXPECT_TRUE(rep.all_pass());
  EXPECT_LE(rep.rows[0].pointwise, 1.0 + 1e-15);
  EXPECT_NEAR(rep.v, 2 * std::exp(mu), 1e-14);

  auto no_profile = run_ensemble(WaveFunction::delta(lat), flip_spec(0.5, {}), 2, 1);
  EXPECT_THROW(exp_moment_check(no_profile, 0.1, HoppingKernel::laplacian(1), 1.0), DomainError);
}

TEST(ExpMoments, BoundGrowsAsLambdaApproachesMu) {
  Lattice lat({256});
  const double mu = 0.4;
  auto psi0 = WaveFunction::exponential(lat, mu, 1.0);
  auto spec = free_spec(1.0, {});
  spec.integrator = Integrator::strang;
  auto est = run_ensemble(psi0, spec, 2, 1);
  std::vector<double> bounds, sums;
  for (double f : {0.5, 0.75, 0.875}) {
    auto r = exp_moment_check(est, f * mu, HoppingKernel::laplacian(1), 1.0).rows[0];
    EXPECT_TRUE(r.pass);
    bounds.push_back(r.sum_bound);
    sums.push_back(r.weighted_sum);
  }
  // halving mu - lambda roughly doubles the 1D tail sum
  EXPECT_NEAR(bounds[1] / bounds[0], 2.0, 0.3);
  EXPECT_NEAR(bounds[2] / bounds[1], 2.0, 0.3);
  EXPECT_LT(sums[0], sums[1]);
  EXPECT_LT(sums[1], sums[2]);
}

TEST(Clt, GaussianReferences) {
  Eigen::MatrixXd D(1, 1);
  D << 1.7;
  EXPECT_NEAR(gaussian_expectation(RadialPower{2}, D), 1.7, 1e-15);
  EXPECT_NEAR(gaussian_expectation(RadialPower{4}, D), 3 * 1.7 * 1.7, 1e-14);
  Eigen::Matrix2d D2;
  D2 << 1.5, 0.3, 0.3, 0.8;
  EXPECT_NEAR(gaussian_expectation(RadialPower{2}, D2), 2.3, 1e-15);

  // bump at the origin, width 1: quadrature against a 1e6-sample Monte Carlo and the closed form
  GaussianBump bump{{0.0}, 1.0};
  Eigen::MatrixXd I(1, 1);
  I << 1.0;
  const double quad = gaussian_expectation(bump, I);
  std::mt19937_64 g(42);
  std::normal_distribution<double> n;
  double mc = 0;
  for (int i = 0; i < 1000000; ++i) {
    const double x = n(g);
    mc += std::exp(-x * x / 2);
  }
  mc /= 1e6;
  EXPECT_NEAR(quad, mc, 1e-3);
  EXPECT_NEAR(quad, 1.0 / std::sqrt(2.0), 1e-13);

  GaussianBump off{{0.7}, 0.5};
  const double w2 = 0.25, c = 0.7;
  EXPECT_NEAR(gaussian_expectation(off, D), std::sqrt(w2 / (w2 + 1.7)) * std::exp(-c * c / (2 * (w2 + 1.7))), 1e-7);

  Eigen::MatrixXd bad(1, 1);
  bad << -1.0;
  EXPECT_THROW(gaussian_expectation(RadialPower{2}, bad), DomainError);
}

TEST(Clt, FunctionalUsesNorm) {
  Lattice lat({64});
  auto psi0 = WaveFunction::exponential(lat, 1.0, 2.0);
  auto est = run_ensemble(psi0, flip_spec(1.0, {}), 4, 1);
  Eigen::MatrixXd D(1, 1);
  D << 2.0;
  auto r = clt_functional(est, RadialPower{2}, 1.0, D);
  EXPECT_NEAR(r.rhs, psi0.norm2() * 2.0, 1e-12);
  EXPECT_GT(r.lhs, 0.0);
}

TEST(CharFnMonteCarlo, CommensurateAgreesWithMinimalImage) {
  Lattice lat({6});
  auto spec = flip_spec(1.0, {0.5, 1.0}, Integrator::dense);
  std::vector<ZVec> zs = {{0.0}, {std::numbers::pi / 3}, {0.5}, {cplx(0, 0.2)}};
  auto mc = char_fn_monte_carlo(WaveFunction::delta(lat), spec, zs, 40, 3);
  for (std::size_t ti = 0; ti < 2; ++ti) {
    EXPECT_NEAR(std::abs(mc.twisted[ti][0].mean - 1.0), 0.0, 1e-12);
    EXPECT_NEAR(std::abs(mc.twisted[ti][1].mean - mc.plain[ti][1].mean), 0.0, 1e-10);
  }
  // same estimator through the split-step integrator
  auto s2 = spec;
  s2.integrator = Integrator::strang;
  s2.dt = 1e-3;
  auto mc2 = char_fn_monte_carlo(WaveFunction::delta(lat), s2, zs, 40, 3);
  for (std::size_t j = 0; j < zs.size(); ++j) EXPECT_NEAR(std::abs(mc2.twisted[1][j].mean - mc.twisted[1][j].mean), 0.0, 1e-4);
}
