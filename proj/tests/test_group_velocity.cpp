#include <gtest/gtest.h>

#include <cmath>

#include "malab/group_velocity.hpp"

using namespace malab;

namespace {

const HoppingKernel lap1 = HoppingKernel::laplacian(1);
const NoiseProcess silent(ResampleProcess{1.0, {{0.0, 1.0}}});

}  // namespace

TEST(LR, IdentityAtZero) {
  Lattice lat({16});
  auto rep = lr_check(lap1, NoiseProcess(FlipProcess{1.0, 0.5}), lat, 0.5, {0.0, 0.5}, 3, 1);
  for (const auto& r : rep.rows)
    if (r.t == 0.0) EXPECT_EQ(r.ratio, 1.0);
  EXPECT_EQ(rep.rows.size(), 3u * 2 * 16);
}

TEST(LR, FreeEvolutionMatchesBessel) {
  Lattice lat({64});
  const double m = 0.5, t = 1.0;
  auto rep = lr_check(lap1, silent, lat, m, {t}, 1, 0);
  const double v = 2 * std::exp(m);
  EXPECT_DOUBLE_EQ(rep.v, v);
  double s = 0.0;
  for (int x = -31; x <= 32; ++x) s += std::exp(m * std::abs(x)) * std::abs(std::cyl_bessel_j(std::abs(x), 2 * t));
  const double oracle = s * std::exp(-v * t);
  EXPECT_LT(oracle, 1.0);
  // roundoff in far entries of U is amplified by up to e^{mL/2} ~ 1e7
  for (const auto& r : rep.rows) EXPECT_NEAR(r.ratio, oracle, 64 * 1e-16 * std::exp(m * 32)) << r.y;
}

TEST(LR, BoundHoldsForFlipNoise) {
  Lattice lat({64});
  for (double m : {0.5, 0.25, 0.1}) {
    auto rep = lr_check(lap1, NoiseProcess(FlipProcess{1.0, 0.5}), lat, m, {0.5, 1.0, 2.0}, 20, 7);
    EXPECT_TRUE(rep.ok()) << "m=" << m << " max " << rep.max_ratio;
    EXPECT_GT(rep.min_ratio, 0.0);
  }
}

TEST(LR, BoundHoldsForFrozenDisorder) {
  Lattice lat({64});
  NoiseProcess frozen = NoiseProcess(ResampleProcess{1.0, {{-3.0, 0.5}, {2.0, 0.5}}}).as_frozen();
  auto rep = lr_check(lap1, frozen, lat, 0.5, {0.5, 1.0, 2.0}, 20, 3);
  EXPECT_TRUE(rep.ok()) << rep.max_ratio;
}

TEST(LR, Errors) {
  Lattice lat({16});
  // v = 2 e^{0.5} ~ 3.3, so t = 2 gives 6.6 > 6.4
  EXPECT_THROW(lr_check(lap1, silent, lat, 0.5, {2.0}, 1, 0), DomainError);
  EXPECT_THROW(lr_check(lap1, silent, lat, 0.5, {1.0, 0.5}, 1, 0), DomainError);
  EXPECT_THROW(lr_check(lap1, silent, lat, 0.5, {}, 1, 0), DomainError);
  EXPECT_THROW(lr_check(lap1, silent, lat, 0.5, {0.5}, 0, 0), DomainError);
}
