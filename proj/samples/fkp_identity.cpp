// Characteristic function of |psi_t|^2 two ways: Monte Carlo over noise paths
// and the matrix element <delta_0 x 1, e^{-tL_z} delta_0 x 1>.
#include <cstdio>

#include "malab/malab.hpp"

int main() {
  using namespace malab;
  const Lattice lat({6});
  const auto psi = WaveFunction::delta(lat);
  EvolutionSpec spec;
  spec.kernel = HoppingKernel::laplacian(1);
  spec.process = NoiseProcess(FlipProcess{1.0, 0.5});
  spec.integrator = Integrator::dense;
  spec.t_final = 2.0;
  spec.snapshots = {0.5, 1.0, 2.0};
  const std::vector<ZVec> zs{{0.5}, {cplx(0.0, 0.2)}};
  const auto mc = char_fn_monte_carlo(psi, spec, zs, 1000, 4, 0, 16);

  std::printf("%5s %8s %24s %24s %8s\n", "t", "z", "monte carlo", "matrix element", "se");
  for (std::size_t j = 0; j < zs.size(); ++j) {
    const auto op = build_augmented(spec.kernel, spec.process, lat, zs[j]);
    for (std::size_t i = 0; i < mc.times.size(); ++i) {
      const auto& e = mc.twisted[i][j];
      const cplx f = fkp_element(op, mc.times[i], psi);
      std::printf("%5.2f %8s %11.6f%+11.6fi %11.6f%+11.6fi %8.1e\n", mc.times[i], z_label(zs[j]).c_str(),
                  e.mean.real(), e.mean.imag(), f.real(), f.imag(), e.se());
    }
  }
}
