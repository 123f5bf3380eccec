#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "error.hpp"
#include "evolution.hpp"
#include "lattice.hpp"
#include "noise.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace malab {

struct LRRow {
  std::size_t realization = 0;
  double t = 0.0;
  std::size_t y = 0;
  double ratio = 0.0;  // sum_x e^{m|x-y|} |U(t,0;x,y)| / e^{vt}
};

struct LRReport {
  double m = 0.0;
  double v = 0.0;
  std::vector<LRRow> rows;
  double max_ratio = 0.0;
  double min_ratio = 0.0;

  /// Excess over 1 up to `slack` is roundoff in the exponential.
  bool ok(double slack = 1e-9) const { return max_ratio <= 1.0 + slack; }
};

/// Weighted column sums of U(t, 0) along sampled noise paths, for every
/// column y and every t in `times`, against e^{vt} with v = v(m). Distances
/// are minimal-image; requires t v < 0.4 min L so the weight never sees the
/// wrap.
inline LRReport lr_check(const HoppingKernel& kernel, const NoiseProcess& process, const Lattice& lattice, double m,
                         const std::vector<double>& times, std::size_t n_realizations, std::uint64_t master_seed,
                         unsigned threads = 0, Integrator integrator = Integrator::dense) {
  if (times.empty()) throw DomainError("lr_check: empty time grid");
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!(times[i] >= 0.0)) throw DomainError("lr_check: times must be non-negative");
    if (i > 0 && times[i] <= times[i - 1]) throw DomainError("lr_check: times must be strictly increasing");
  }
  if (n_realizations == 0) throw DomainError("lr_check: need at least one realization");
  if (lattice.size() > dense_site_cap) throw CapacityError("lr_check: lattice exceeds the dense site cap");
  kernel.check_fits(lattice);

  LRReport rep;
  rep.m = m;
  rep.v = group_velocity(kernel, m);
  const double reach = times.back() * rep.v, limit = 0.4 * lattice.min_extent();
  if (!(reach < limit))
    throw DomainError("lr_check: t v = " + std::to_string(reach) + " is not below 0.4 min L = " + std::to_string(limit));

  const auto N = static_cast<Eigen::Index>(lattice.size());
  Eigen::MatrixXd weight(N, N);
  for (Eigen::Index x = 0; x < N; ++x)
    for (Eigen::Index y = 0; y < N; ++y)
      weight(x, y) = std::exp(m * lattice.distance(static_cast<std::size_t>(x), static_cast<std::size_t>(y)));

  EvolutionSpec spec;
  spec.kernel = kernel;
  spec.process = process;
  spec.t_final = times.back();
  spec.integrator = integrator;

  std::vector<std::vector<LRRow>> per(n_realizations);
  parallel_for(n_realizations, threads, [&](std::size_t r) {
    Rng rng(master_seed, r);
    const NoisePath path = sample_path(spec, lattice, rng);
    Eigen::MatrixXcd U = Eigen::MatrixXcd::Identity(N, N);
    double prev = 0.0;
    for (double t : times) {
      if (t > prev) propagate_along(U, kernel, lattice, path, prev, t, integrator, spec.substep());
      prev = t;
      const Eigen::RowVectorXd sums = weight.cwiseProduct(U.cwiseAbs()).colwise().sum();
      const double scale = std::exp(-rep.v * t);
      for (Eigen::Index y = 0; y < N; ++y) per[r].push_back({r, t, static_cast<std::size_t>(y), sums(y) * scale});
    }
  });
  rep.max_ratio = 0.0;
  rep.min_ratio = std::numeric_limits<double>::infinity();
  for (auto& rows : per)
    for (const auto& row : rows) {
      rep.max_ratio = std::max(rep.max_ratio, row.ratio);
      rep.min_ratio = std::min(rep.min_ratio, row.ratio);
      rep.rows.push_back(row);
    }
  return rep;
}

}  // namespace malab
