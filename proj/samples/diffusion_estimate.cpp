// Mean squared displacement of the flip model against tr D from the
// augmented operator on a small torus.
#include <cstdio>
#include <cstdlib>

#include "malab/malab.hpp"

int main(int argc, char** argv) {
  using namespace malab;
  const std::size_t n = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 400;
  const NoiseProcess flip(FlipProcess{1.0, 0.5});
  const auto K = HoppingKernel::laplacian(1);

  const double D = diffusion_matrix(K, flip, Lattice({8}), DiffusionMethod::formula).D(0, 0);
  std::printf("tr D (L = 8 augmented operator) = %.6f\n", D);

  EvolutionSpec spec;
  spec.kernel = K;
  spec.process = flip;
  spec.t_final = 16.0;
  spec.snapshots = {2.0, 4.0, 8.0, 16.0};
  EnsembleOptions opt;
  opt.observables.push_back(moment_observable("m2", 2));
  const auto est = run_ensemble(WaveFunction::delta(Lattice({96})), spec, n, 1, opt);

  std::printf("%6s %12s %10s %14s\n", "t", "m2/t", "se", "boundary mass");
  for (std::size_t i = 0; i < est.times.size(); ++i) {
    const auto& m2 = est.observable("m2", i);
    const double t = est.times[i];
    std::printf("%6.1f %12.5f %10.5f %14.3g\n", t, m2.mean.real() / t, m2.se_re / t, est.boundary_mass[i]);
  }
}
