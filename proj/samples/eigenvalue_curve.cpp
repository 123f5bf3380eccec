// Leading eigenvalue E(z) of the augmented generator along the real and
// imaginary axes, next to the quadratic (1/2) D z^2.
#include <cstdio>

#include "malab/malab.hpp"

int main() {
  using namespace malab;
  const Lattice lat({6});
  const NoiseProcess flip(FlipProcess{1.0, 0.5});
  const auto K = HoppingKernel::laplacian(1);
  const double D = diffusion_matrix(K, flip, lat, DiffusionMethod::formula).D(0, 0);

  std::printf("D = %.8f\n%8s %14s %14s %14s\n", D, "z", "Re E", "Im E", "D z^2 / 2");
  for (double s : {0.0, 0.02, 0.05, 0.1, 0.15}) {
    for (ZVec z : {ZVec{s}, ZVec{cplx(0.0, s)}}) {
      const cplx E = leading_eigenvalue(build_augmented(K, flip, lat, z));
      const cplx q = 0.5 * D * z[0] * z[0];
      std::printf("%8s %14.6e %14.6e %14.6e\n", z_label(z).c_str(), E.real(), E.imag(), q.real());
      if (s == 0.0) break;
    }
  }
}
