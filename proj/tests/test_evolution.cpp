#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "malab/evolution.hpp"

using namespace malab;

namespace {

EvolutionSpec free_spec(double t, Integrator integ, double dt = 0.0) {
  EvolutionSpec s;
  s.kernel = HoppingKernel::laplacian(1);
  s.process = NoiseProcess(ResampleProcess{1.0, {{0.0, 1.0}}}, true);
  s.t_final = t;
  s.dt = dt;
  s.integrator = integ;
  return s;
}

EvolutionSpec flip_spec(double t, Integrator integ, double dt = 0.0) {
  EvolutionSpec s;
  s.kernel = HoppingKernel::laplacian(1);
  s.process = NoiseProcess(FlipProcess{1.0, 0.5});
  s.t_final = t;
  s.dt = dt;
  s.integrator = integ;
  return s;
}

double max_diff(const std::vector<cplx>& a, const std::vector<cplx>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Evolve, ZeroTimeIsIdentity) {
  Lattice lat({8});
  Rng r(1, 0);
  auto psi0 = WaveFunction::delta(lat);
  auto tr = evolve(psi0, flip_spec(0.0, Integrator::strang), r);
  ASSERT_EQ(tr.snapshots.size(), 1u);
  EXPECT_EQ(tr.snapshots[0].time, 0.0);
  EXPECT_EQ(tr.snapshots[0].psi.amp, psi0.amp);
}

TEST(Evolve, FreeBesselOracle) {
  Lattice lat({64});
  const double t = 3.0;
  Rng r(1, 0);
  auto dense = evolve(WaveFunction::delta(lat), free_spec(t, Integrator::dense), r).snapshots.back().psi;
  auto strang = evolve(WaveFunction::delta(lat), free_spec(t, Integrator::strang, 1e-3), r).snapshots.back().psi;
  double ed = 0, es = 0;
  for (std::size_t i = 0; i < lat.size(); ++i) {
    const int x = lat.coord(i)[0];
    const double j = std::cyl_bessel_j(double(std::abs(x)), 2 * t);
    ed = std::max(ed, std::abs(std::norm(dense.amp[i]) - j * j));
    es = std::max(es, std::abs(std::norm(strang.amp[i]) - j * j));
  }
  EXPECT_LE(ed, 1e-8);
  EXPECT_LE(es, 1e-5);
}

TEST(Evolve, ConstantPotentialIsAGauge) {
  Lattice lat({16});
  auto free = free_spec(1.7, Integrator::dense);
  auto shifted_spec = free;
  shifted_spec.process = NoiseProcess(ResampleProcess{1.0, {{0.8, 1.0}}}, true);
  Rng r1(2, 0), r2(2, 0);
  auto a = evolve(WaveFunction::delta(lat), free, r1).snapshots.back().psi;
  auto b = evolve(WaveFunction::delta(lat), shifted_spec, r2).snapshots.back().psi;
  for (std::size_t i = 0; i < lat.size(); ++i) EXPECT_NEAR(std::abs(a.amp[i]), std::abs(b.amp[i]), 1e-12);
}

TEST(Evolve, NormConservedBothModes) {
  Lattice lat({32});
  auto psi0 = WaveFunction::exponential(lat, 0.4, 1.0);
  for (auto integ : {Integrator::strang, Integrator::dense}) {
    auto spec = flip_spec(3.0, integ);
    spec.snapshots = {0.5, 1.0, 2.25, 3.0};
    Rng r(3, 0);
    auto tr = evolve(psi0, spec, r);
    ASSERT_EQ(tr.snapshots.size(), 4u);
    for (const auto& s : tr.snapshots) EXPECT_NEAR(s.psi.norm2(), psi0.norm2(), 1e-10 * psi0.norm2());
  }
  auto bspec = flip_spec(2.0, Integrator::strang);
  bspec.process = NoiseProcess(BrownianProcess{0.5});
  Rng r(3, 1);
  EXPECT_NEAR(evolve(psi0, bspec, r).snapshots.back().psi.norm2(), psi0.norm2(), 1e-10 * psi0.norm2());
}

TEST(Evolve, StrangSecondOrder) {
  Lattice lat({16});
  auto psi0 = WaveFunction::delta(lat);
  Rng rd(4, 0);
  auto exact = evolve(psi0, flip_spec(2.0, Integrator::dense), rd);
  ASSERT_FALSE(exact.events.empty());
  double prev = 0;
  for (double dt : {0.04, 0.02, 0.01}) {
    Rng rs(4, 0);
    auto tr = evolve(psi0, flip_spec(2.0, Integrator::strang, dt), rs);
    ASSERT_EQ(tr.events.size(), exact.events.size());
    const double err = max_diff(tr.snapshots.back().psi.amp, exact.snapshots.back().psi.amp);
    if (prev > 0) EXPECT_GE(prev / err, 3.5) << "dt=" << dt;
    prev = err;
  }
}

TEST(Evolve, SnapshotsAndErrors) {
  Lattice lat({8});
  Rng r(5, 0);
  auto spec = flip_spec(1.0, Integrator::strang);
  spec.snapshots = {0.0, 0.333, 1.0};
  auto tr = evolve(WaveFunction::delta(lat), spec, r);
  ASSERT_EQ(tr.snapshots.size(), 3u);
  EXPECT_EQ(tr.snapshots[1].time, 0.333);
  EXPECT_EQ(tr.snapshots[0].psi.amp, WaveFunction::delta(lat).amp);

  spec.snapshots = {1.5};
  EXPECT_THROW(evolve(WaveFunction::delta(lat), spec, r), DomainError);
  spec.snapshots = {};
  spec.dt = -1;
  EXPECT_THROW(evolve(WaveFunction::delta(lat), spec, r), DomainError);
  spec.dt = 0;
  EXPECT_THROW(evolve(WaveFunction(lat), spec, r), DomainError);
  auto big = flip_spec(0.1, Integrator::dense);
  EXPECT_THROW(evolve(WaveFunction::delta(Lattice({4100})), big, r), CapacityError);
}

TEST(Evolve, Deterministic) {
  Lattice lat({24});
  for (auto integ : {Integrator::strang, Integrator::dense}) {
    Rng r1(6, 9), r2(6, 9);
    auto a = evolve(WaveFunction::delta(lat), flip_spec(1.5, integ), r1);
    auto b = evolve(WaveFunction::delta(lat), flip_spec(1.5, integ), r2);
    EXPECT_EQ(a.snapshots.back().psi.amp, b.snapshots.back().psi.amp);
  }
}

TEST(Propagator, IdentityCompositionUnitarity) {
  Lattice lat({12});
  auto spec = flip_spec(2.0, Integrator::dense);
  Rng r(7, 0);
  auto path = sample_path(spec, lat, r);
  ASSERT_GT(path.start.size(), 1u);
  const auto n = static_cast<Eigen::Index>(lat.size());
  EXPECT_EQ(propagator(spec, lat, path, 0.7, 0.7).U, Eigen::MatrixXcd::Identity(n, n));

  auto U10 = propagator(spec, lat, path, 0.0, 1.1).U;
  auto U21 = propagator(spec, lat, path, 1.1, 2.0).U;
  auto U20 = propagator(spec, lat, path, 0.0, 2.0).U;
  EXPECT_LE((U21 * U10 - U20).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE((U20.adjoint() * U20 - Eigen::MatrixXcd::Identity(n, n)).cwiseAbs().maxCoeff(), 1e-8);
  auto U02 = propagator(spec, lat, path, 2.0, 0.0).U;
  EXPECT_LE((U02 * U20 - Eigen::MatrixXcd::Identity(n, n)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Propagator, MatchesEvolveColumns) {
  Lattice lat({10});
  auto spec = flip_spec(1.3, Integrator::dense);
  spec.record_path = true;
  Rng r(8, 0);
  auto tr = evolve(WaveFunction::delta(lat), spec, r);
  auto U = propagator(spec, lat, tr.path, 0.0, 1.3).U;
  const auto& psi = tr.snapshots.back().psi.amp;
  for (std::size_t i = 0; i < lat.size(); ++i) EXPECT_NEAR(std::abs(U(i, 0) - psi[i]), 0.0, 1e-10);
}

TEST(Propagator, TimeReversal) {
  Lattice lat({14});
  auto spec = flip_spec(2.0, Integrator::dense);
  spec.record_path = true;
  Rng r(9, 0);
  auto psi0 = WaveFunction::exponential(lat, 0.5, 1.0);
  auto tr = evolve(psi0, spec, r);
  // conj(psi_t) evolved forward along the reversed path is conj(psi_0) for a real kernel
  Eigen::VectorXcd v(lat.size());
  for (std::size_t i = 0; i < lat.size(); ++i) v(i) = std::conj(tr.snapshots.back().psi.amp[i]);
  propagate_along(v, spec.kernel, lat, reversed(tr.path), 0.0, 2.0);
  for (std::size_t i = 0; i < lat.size(); ++i) EXPECT_NEAR(std::abs(std::conj(v(i)) - psi0.amp[i]), 0.0, 1e-8);
}

TEST(Evolve, StrangThroughput) {
  // the L=128 diffusion ensemble is the budget driver
  Lattice lat({128});
  auto spec = flip_spec(3.0, Integrator::strang);
  Rng r(10, 0);
  const auto t0 = std::chrono::steady_clock::now();
  auto tr = evolve(WaveFunction::delta(lat), spec, r);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  RecordProperty("seconds_per_unit_time", std::to_string(s / 3.0));
  std::printf("strang L=128: %.3g s per unit time (%zu events)\n", s / 3.0, tr.events.size());
  EXPECT_NEAR(tr.snapshots.back().psi.norm2(), 1.0, 1e-10);
}
