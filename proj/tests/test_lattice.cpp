#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "malab/fft.hpp"
#include "malab/lattice.hpp"

using namespace malab;

namespace {

WaveFunction random_wave(const Lattice& lat, unsigned seed) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> n;
  WaveFunction w(lat);
  for (auto& a : w.amp) a = {n(g), n(g)};
  return w;
}

cplx inner(const WaveFunction& a, const WaveFunction& b) {
  cplx s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a.amp[i]) * b.amp[i];
  return s;
}

}  // namespace

TEST(Lattice, CountsAndMinimalImage) {
  Lattice lat({8, 6});
  EXPECT_EQ(lat.size(), 48u);
  for (std::size_t i = 0; i < lat.size(); ++i) {
    auto c = lat.coord(i);
    EXPECT_TRUE(c[0] > -4 && c[0] <= 4);
    EXPECT_TRUE(c[1] > -3 && c[1] <= 3);
    EXPECT_EQ(lat.index(c), i);
  }
}

TEST(Lattice, ShiftRoundTrip) {
  Lattice lat({6, 4});
  const int a[] = {5, -3}, b[] = {-5, 3};
  for (std::size_t i = 0; i < lat.size(); ++i) EXPECT_EQ(lat.shift(lat.shift(i, a), b), i);
}

TEST(Lattice, RejectsTinyExtent) { EXPECT_THROW(Lattice({2}), DomainError); }

TEST(Hopping, DeltaStencil) {
  Lattice lat({8});
  auto out = apply_hopping(WaveFunction::delta(lat), HoppingKernel::laplacian(1));
  for (std::size_t i = 0; i < lat.size(); ++i) {
    const int x = lat.coord(i)[0];
    EXPECT_EQ(out.amp[i], cplx(std::abs(x) == 1 ? 1.0 : 0.0));
  }
}

TEST(Hopping, ConstantAndPlaneWave) {
  Lattice lat({8});
  auto K = HoppingKernel::laplacian(1);
  WaveFunction one(lat, std::vector<cplx>(8, 1.0));
  for (auto a : apply_hopping(one, K).amp) EXPECT_NEAR(std::abs(a - 2.0), 0.0, 1e-15);

  const double k = 2 * std::numbers::pi / 8;
  WaveFunction pw(lat);
  for (std::size_t i = 0; i < 8; ++i) pw.amp[i] = std::polar(1.0, k * double(i));
  auto out = apply_hopping(pw, K);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(std::abs(out.amp[i] - 2 * std::cos(k) * pw.amp[i]), 0.0, 1e-14);
}

TEST(Hopping, ErrorsOnMismatch) {
  Lattice lat({8});
  EXPECT_THROW(apply_hopping(WaveFunction::delta(lat), HoppingKernel::laplacian(2)), DomainError);
  HoppingKernel wide(1, {{{4}, 1.0}, {{-4}, 1.0}});
  EXPECT_THROW(apply_hopping(WaveFunction::delta(lat), wide), DomainError);
}

TEST(Hopping, Symbol) {
  auto K = HoppingKernel::laplacian(1);
  for (auto [k, v] : {std::pair{0.0, 2.0}, {std::numbers::pi, -2.0}, {std::numbers::pi / 2, 0.0}}) {
    const double kk[] = {k};
    EXPECT_NEAR(std::abs(hopping_symbol(K, kk) - v), 0.0, 1e-15);
  }
}

TEST(Hopping, AgreesWithFourierMultiplier) {
  Lattice lat({6, 8});
  HoppingKernel K(2, {{{1, 0}, cplx(1, 0.5)}, {{-1, 0}, cplx(1, -0.5)}, {{1, 2}, 0.3}, {{-1, -2}, 0.3}, {{0, 0}, 0.7}});
  auto psi = random_wave(lat, 3);
  auto direct = apply_hopping(psi, K);
  auto fft = FourierTransform::for_extent(lat.extent());
  auto sym = symbol_grid(K, lat);
  auto a = psi.amp;
  fft->forward(a.data());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] *= sym[i] / double(a.size());
  fft->backward(a.data());
  double err = 0, scale = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    err = std::max(err, std::abs(a[i] - direct.amp[i]));
    scale = std::max(scale, std::abs(direct.amp[i]));
  }
  EXPECT_LE(err, 1e-12 * scale);
}

TEST(Hopping, SelfAdjointOnRandomPairs) {
  Lattice lat({10});
  HoppingKernel K(1, {{{1}, cplx(0.2, 1.0)}, {{-1}, cplx(0.2, -1.0)}, {{3}, cplx(0, 0.4)}, {{-3}, cplx(0, -0.4)}});
  for (unsigned s = 0; s < 5; ++s) {
    auto f = random_wave(lat, 2 * s), g = random_wave(lat, 2 * s + 1);
    EXPECT_NEAR(std::abs(inner(f, apply_hopping(g, K)) - inner(apply_hopping(f, K), g)), 0.0, 1e-12);
  }
}

TEST(GroupVelocity, Values) {
  auto K = HoppingKernel::laplacian(1);
  EXPECT_DOUBLE_EQ(group_velocity(K, 0.0), 2.0);
  EXPECT_NEAR(group_velocity(K, 0.5), 3.29744, 1e-5);
  HoppingKernel K2(1, {{{1}, 1.0}, {{-1}, 1.0}, {{2}, 0.5}, {{-2}, 0.5}});
  EXPECT_DOUBLE_EQ(group_velocity(K2, 0.0), 3.0);
  double prev = 0.0;
  for (double m = 0.0; m <= 2.0; m += 0.1) {
    const double v = group_velocity(K2, m);
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST(Assumptions, Reports) {
  EXPECT_TRUE(check_assumptions(HoppingKernel::laplacian(1), 1.0).all());
  EXPECT_TRUE(check_assumptions(HoppingKernel::laplacian(3), 1.0).all());
  auto bad = check_assumptions(HoppingKernel(1, {{{1}, 1.0}, {{-1}, 2.0}}), 1.0);
  EXPECT_FALSE(bad.self_adjoint);
  auto flat = check_assumptions(HoppingKernel(2, {{{1, 0}, 1.0}, {{-1, 0}, 1.0}}), 1.0);
  EXPECT_TRUE(flat.self_adjoint);
  EXPECT_FALSE(flat.non_degenerate);
  EXPECT_EQ(flat.support_rank, 1);
}

TEST(WaveFunction, ExponentialProfileHolds) {
  Lattice lat({16});
  auto w = WaveFunction::exponential(lat, 0.4, 1.0);
  EXPECT_LE(w.profile_sup(0.4), 1.0 + 1e-15);
}
