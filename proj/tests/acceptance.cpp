// Acceptance gate. One TEST per criterion; the summary printed at exit has one
// PASS/FAIL line per criterion with the measured numbers.
#include <gtest/gtest.h>

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numbers>

#include "malab/malab.hpp"

using namespace malab;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string title;
  std::string detail;
};
std::map<int, Verdict>& verdicts() {
  static std::map<int, Verdict> v;
  return v;
}

void record(int n, std::string title, bool pass, std::string detail) {
  verdicts()[n] = {pass, std::move(title), std::move(detail)};
  EXPECT_TRUE(pass) << "criterion " << n << ": " << verdicts()[n].detail;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

NoiseProcess flip() { return NoiseProcess(FlipProcess{1.0, 0.5}); }

EvolutionSpec flip_spec(double t_final, std::vector<double> snaps, Integrator integ = Integrator::strang) {
  EvolutionSpec s;
  s.kernel = HoppingKernel::laplacian(1);
  s.process = flip();
  s.t_final = t_final;
  s.snapshots = std::move(snaps);
  s.integrator = integ;
  return s;
}

// Every ensemble estimate the suite produces, for the normalization criterion.
std::vector<std::pair<std::string, const DensityEstimate*>>& ensembles() {
  static std::vector<std::pair<std::string, const DensityEstimate*>> e;
  return e;
}

const double tau_t = 1.0;
const std::vector<double> taus{4, 8, 16, 32};
const ZVec z_clt{cplx(0.5, 0.2)};
std::string clt_name(double tau) { return "cf tau=" + format_double(tau); }

struct SharedRun {
  DensityEstimate est;
  double seconds = 0.0;
};

// 1D flip model on L = 128, 10^4 trajectories, snapshots for the diffusive
// scaling (t = 30) and the complex-z convergence (t = tau).
const SharedRun& shared_run() {
  static const SharedRun run = [] {
    SharedRun r;
    Lattice lat({128});
    auto spec = flip_spec(32.0, {4.0, 8.0, 16.0, 30.0, 32.0});
    EnsembleOptions opt;
    opt.observables.push_back(moment_observable("m2", 2));
    opt.observables.push_back(moment_observable("m4", 4));
    opt.observables.push_back(clt_observable("bump", GaussianBump{{0.0}, 1.0}));
    for (double tau : taus) opt.observables.push_back(char_fn_observable(clt_name(tau), {z_clt[0] / std::sqrt(tau)}));
    const auto t0 = std::chrono::steady_clock::now();
    r.est = run_ensemble(WaveFunction::delta(lat), spec, 10000, 20241014, opt);
    r.seconds = seconds_since(t0);
    return r;
  }();
  return run;
}

// Exponentially bounded start, dense mode, t <= 2.
const DensityEstimate& exp_run() {
  static const DensityEstimate est = [] {
    Lattice lat({48});
    return run_ensemble(WaveFunction::exponential(lat, 0.4, 1.0),
                        flip_spec(2.0, {0.25, 0.5, 1.0, 1.5, 2.0}, Integrator::dense), 1000, 77, {});
  }();
  return est;
}

const DensityEstimate& planar_run() {
  static const DensityEstimate est = [] {
    Lattice lat({24, 24});
    EvolutionSpec s;
    s.kernel = HoppingKernel::laplacian(2);
    s.process = NoiseProcess(ResampleProcess{0.5, {{-1.0, 0.25}, {0.0, 0.5}, {1.5, 0.25}}});
    s.t_final = 3.0;
    s.snapshots = {1.0, 2.0, 3.0};
    const std::vector<int> start{2, -3};
    return run_ensemble(WaveFunction::delta(lat, start), s, 200, 5, {});
  }();
  return est;
}

double diffusion_L8() {
  static const double D = diffusion_matrix(HoppingKernel::laplacian(1), flip(), Lattice({8}), DiffusionMethod::formula).D(0, 0);
  return D;
}

}  // namespace

TEST(Acceptance, C01_FreeEvolutionOracle) {
  const auto t0 = std::chrono::steady_clock::now();
  Lattice lat({64});
  EvolutionSpec s;
  s.kernel = HoppingKernel::laplacian(1);
  s.process = NoiseProcess(ResampleProcess{1.0, {{0.0, 1.0}}}, true);  // V = 0
  s.t_final = 3.0;
  Rng rng(1, 0);
  s.integrator = Integrator::dense;
  const auto dense = evolve(WaveFunction::delta(lat), s, rng).snapshots.back().psi;
  s.integrator = Integrator::strang;
  s.dt = 1e-3;
  const auto strang = evolve(WaveFunction::delta(lat), s, rng).snapshots.back().psi;
  double ed = 0.0, es = 0.0;
  for (std::size_t i = 0; i < lat.size(); ++i) {
    const double j = std::cyl_bessel_j(double(std::abs(lat.coord(i)[0])), 6.0);
    ed = std::max(ed, std::abs(std::norm(dense.amp[i]) - j * j));
    es = std::max(es, std::abs(std::norm(strang.amp[i]) - j * j));
  }
  const double secs = seconds_since(t0);
  record(1, "free evolution vs J_x(2t)^2", ed <= 1e-8 && es <= 1e-5 && secs < 10.0,
         "dense " + num(ed) + " <= 1e-8, strang(dt=1e-3) " + num(es) + " <= 1e-5, " + num(secs) + " s < 10 s");
}

TEST(Acceptance, C02_Normalization) {
  ensembles().emplace_back("L=128 flip strang", &shared_run().est);
  ensembles().emplace_back("L=48 exponential dense", &exp_run());
  ensembles().emplace_back("24x24 resample strang", &planar_run());
  double worst = 0.0;
  std::string where;
  for (const auto& [name, est] : ensembles())
    for (std::size_t ti = 0; ti < est->times.size(); ++ti) {
      double sum = 0.0;
      for (double r : est->mean[ti]) sum += r;
      const double dev = std::abs(sum - est->norm2_0);
      if (dev >= worst) {
        worst = dev;
        where = name + " t=" + num(est->times[ti]);
      }
    }
  record(2, "sum_x rho_t(x) = ||psi0||^2", worst <= 1e-9,
         "max deviation " + num(worst) + " <= 1e-9 over " + std::to_string(ensembles().size()) +
             " runs (worst at " + where + ")");
}

TEST(Acceptance, C03_FkpIdentity) {
  const auto t0 = std::chrono::steady_clock::now();
  Lattice lat({6});
  const auto psi = WaveFunction::delta(lat);
  const std::vector<double> times{0.5, 1.0, 2.0};
  const std::vector<ZVec> zs{{0.0}, {0.5}, {std::numbers::pi / 3}, {cplx(0.0, 0.2)}};
  const auto spec = flip_spec(2.0, times, Integrator::dense);
  const auto mc = char_fn_monte_carlo(psi, spec, zs, 2000, 31, 0, 16);
  double worst = 0.0;
  bool ok = true;
  for (std::size_t j = 0; j < zs.size(); ++j) {
    const auto op = build_augmented(spec.kernel, spec.process, lat, zs[j]);
    for (std::size_t ti = 0; ti < times.size(); ++ti) {
      const auto& e = mc.twisted[ti][j];
      const double dev = std::abs(e.mean - fkp_element(op, times[ti], psi));
      // z = 0 is exact per trajectory (se ~ 1e-17); 1e-9 absorbs the expm error
      ok = ok && dev <= 3 * e.se() + 1e-9;
      if (e.se() > 1e-12) worst = std::max(worst, dev / e.se());
    }
  }
  const double secs = seconds_since(t0);
  record(3, "FKP matrix element vs Monte Carlo", ok && secs < 120.0,
         "max |MC - fkp| / se = " + num(worst) + " <= 3 at 12 (t, z) points, " + num(secs) + " s < 120 s");
}

TEST(Acceptance, C04_KernelIdentitiesAndGap) {
  Lattice lat({6});
  const auto op = build_augmented(HoppingKernel::laplacian(1), flip(), lat, {0.0});
  const auto bc = block_check(op);
  const auto rep = spectral_report(op);
  const auto cert = gap_certificate(op, rep.gap);
  const bool ok = bc.kernel_right <= 1e-12 && bc.kernel_left <= 1e-12 && bc.p0vp0 == 0.0 && rep.gap > 0.0 &&
                  cert.ok();
  record(4, "kernel identities and gap certificate", ok,
         "||L d0|| = " + num(bc.kernel_right) + ", ||L^+ d0|| = " + num(bc.kernel_left) + ", P0VP0 = " +
             num(bc.p0vp0) + ", gap " + num(rep.gap) + " >= certificate " + num(cert.bound_block) + " (block alpha " +
             num(cert.alpha_block) + ") and " + num(cert.bound_markov) + " (Markov alpha " + num(cert.alpha_markov) +
             ")");
}

TEST(Acceptance, C05_DiffusionFormulaVsHessian) {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0, min_eig = INFINITY, asym = 0.0;
  std::string values;
  for (const auto& ext : std::vector<std::vector<int>>{{6}, {8}, {3, 3}}) {
    Lattice lat(ext);
    const auto K = HoppingKernel::laplacian(lat.dim());
    const auto f = diffusion_matrix(K, flip(), lat, DiffusionMethod::formula);
    const auto h = diffusion_matrix(K, flip(), lat, DiffusionMethod::hessian);
    const double scale = f.D.cwiseAbs().maxCoeff();
    worst = std::max(worst, (f.D - h.D).cwiseAbs().maxCoeff() / scale);
    min_eig = std::min(min_eig, f.min_eigenvalue);
    asym = std::max(asym, f.asymmetry / scale);
    values += (values.empty() ? "" : ", ") + std::string(ext.size() == 1 ? "L=" + std::to_string(ext[0]) : "3x3") +
              " D00=" + num(f.D(0, 0));
  }
  const double secs = seconds_since(t0);
  record(5, "diffusion formula vs Hessian of E", worst <= 1e-5 && min_eig > 0.0 && asym <= 1e-12 && secs < 60.0,
         "max relative entry difference " + num(worst) + " <= 1e-5, min eigenvalue " + num(min_eig) +
             ", asymmetry " + num(asym) + " (" + values + "), " + num(secs) + " s < 60 s");
}

TEST(Acceptance, C06_DiffusiveScaling) {
  const auto& run = shared_run();
  const auto& est = run.est;
  const std::size_t ti = est.time_index(30.0);
  const double m2 = est.observable("m2", ti).mean.real();
  const double trD = diffusion_L8();
  const double rel = std::abs(m2 / 30.0 - trD) / trD;
  const double bm = est.boundary_mass[ti];
  const bool clean = bm <= est.boundary_threshold;
  record(6, "diffusive scaling m2/t -> tr D", rel <= 0.15 && clean && run.seconds < 600.0,
         "|m2/t - tr D|/tr D = " + num(rel) + " <= 0.15 (m2/t " + num(m2 / 30.0) + ", tr D " + num(trD) +
             "); boundary mass " + num(bm) + (clean ? " <= " : " > ") + num(est.boundary_threshold) +
             (clean ? " (clean)" : " (flag raised)") + "; " + num(run.seconds) + " s < 600 s");
}

TEST(Acceptance, C07_Gaussianity) {
  const auto& est = shared_run().est;
  const std::size_t ti = est.time_index(30.0);
  const double m2 = est.observable("m2", ti).mean.real(), m4 = est.observable("m4", ti).mean.real();
  const double kurt = m4 / (m2 * m2);
  Eigen::MatrixXd D(1, 1);
  D(0, 0) = diffusion_L8();
  const auto& b = est.observable("bump", ti);
  const double rhs = gaussian_expectation(GaussianBump{{0.0}, 1.0}, D);
  const double dev = std::abs(b.mean.real() - rhs), allowed = 3 * b.se_re + 0.05 * rhs;
  const bool ok = kurt >= 3 * 0.85 && kurt <= 3 * 1.15 && dev <= allowed;
  record(7, "Gaussian limit shape", ok,
         "m4/m2^2 = " + num(kurt) + " in [2.55, 3.45]; bump lhs " + num(b.mean.real()) + " rhs " + num(rhs) +
             ", |diff| " + num(dev) + " <= 3se + 5% = " + num(allowed));
}

TEST(Acceptance, C08_ComplexArgumentConvergence) {
  const auto& est = shared_run().est;
  const double D = diffusion_L8();
  const cplx limit = std::exp(-(tau_t / 2) * D * z_clt[0] * z_clt[0]);
  std::vector<double> errs;
  for (double tau : taus) errs.push_back(std::abs(est.observable(clt_name(tau), est.time_index(tau * tau_t)).mean - limit));
  bool decreasing = true;
  for (std::size_t k = 1; k < errs.size(); ++k) decreasing = decreasing && errs[k] < errs[k - 1];
  std::string list;
  for (std::size_t k = 0; k < errs.size(); ++k)
    list += (k ? ", " : "") + std::string("tau=") + num(taus[k]) + ": " + num(errs[k]);
  const double bm = est.boundary_mass[est.time_index(32.0)];
  record(8, "M_{tau t}(z/sqrt tau) -> exp(-(t/2) D z^2) at z = 0.5+0.2i", decreasing && errs.back() <= 0.05,
         list + " (decreasing: " + (decreasing ? "yes" : "no") + ", final <= 0.05); boundary mass at t=32 " +
             num(bm) + " for information");
}

TEST(Acceptance, C09_GroupVelocity) {
  Lattice lat({64});
  const auto K = HoppingKernel::laplacian(1);
  const std::vector<double> times{0.5, 1.0, 2.0};
  const auto a = lr_check(K, flip(), lat, 0.5, times, 20, 91);
  const auto b = lr_check(K, flip().as_frozen(), lat, 0.5, times, 20, 91);
  record(9, "weighted propagator columns <= e^{vt}", a.ok(1e-9) && b.ok(1e-9),
         "max ratio flip " + num(a.max_ratio) + ", frozen " + num(b.max_ratio) + " <= 1 + 1e-9 (v = " + num(a.v) +
             ")");
}

TEST(Acceptance, C10_ExponentialMoments) {
  const auto& est = exp_run();
  const auto rep = exp_moment_check(est, 0.2, HoppingKernel::laplacian(1), HoppingKernel::laplacian(1).m());
  double worst = 0.0;
  for (const auto& r : rep.rows) worst = std::max(worst, r.pointwise / r.pointwise_bound);
  record(10, "sup_x e^{mu|x|} E|psi_t(x)| <= A e^{vt}", rep.all_pass() && !rep.rows.empty(),
         "max ratio " + num(worst) + " <= 1 over " + std::to_string(rep.rows.size()) + " snapshots, v = " +
             num(rep.v));
}

TEST(Acceptance, C11_SemigroupGrowth) {
  Lattice lat({6});
  const auto K = HoppingKernel::laplacian(1);
  const std::vector<double> times{0.5, 1.0, 2.0};
  const auto g = semigroup_growth_check(build_augmented(K, flip(), lat, {cplx(0.0, 0.2)}), times);
  const auto g0 = semigroup_growth_check(build_augmented(K, flip(), lat, {0.0}), times);
  double worst = 0.0, worst0 = 0.0;
  for (const auto& r : g.rows) worst = std::max(worst, r.norm / r.bound);
  for (const auto& r : g0.rows) worst0 = std::max(worst0, r.norm);
  record(11, "||e^{-tL_z}|| <= e^{t alpha(y)}", g.ok() && g0.ok(),
         "y=0.2: max norm/bound " + num(worst) + " (alpha " + num(g.alpha) + "); y=0: max norm 1 + " +
             num(worst0 - 1.0) + " (slack 1e-12 for the dense exponential)");
}

TEST(Acceptance, C12_Reproducibility) {
  const auto root = fs::temp_directory_path() / ("malab-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(root);
  const std::vector<json> docs{
      {{"experiment", "assumptions"}},
      {{"experiment", "spectral"}, {"lattice", {4}}, {"z", {0.05}}},
      {{"experiment", "fkp-check"}, {"lattice", {6}}, {"n_traj", 200}, {"z", {0.0, 0.5, {{"im", 0.2}}}}},
      {{"experiment", "diffusion-scan"}, {"lattice", {48}}, {"times", {1.0, 2.0, 4.0}}, {"n_traj", 200},
       {"spectral_lattice", {6}}},
      {{"experiment", "clt"}, {"lattice", {48}}, {"taus", {1, 2, 4}}, {"n_traj", 200}, {"spectral_lattice", {6}}},
      {{"experiment", "lr-bound"}, {"lattice", {32}}, {"realizations", 3}},
      {{"experiment", "lr-bound"}, {"lattice", {32}}, {"realizations", 2}, {"sweep", {{"m", {0.25, 0.5}}}}},
  };
  std::size_t compared = 0, mismatched = 0;
  std::string bad;
  auto collect = [](const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".csv")
        files[fs::relative(e.path(), dir).string()] = read_file(e.path());
    return files;
  };
  for (const auto& doc : docs) {
    const auto c = ExperimentConfig::from_json(doc);
    const auto first = run(c, root / "a", 0);
    run(c, root / "b", 0);
    const auto replay = load_config(read_file(first.dir / "manifest.json"));
    run(replay, root / "c", 1);
  }
  const auto a = collect(root / "a"), b = collect(root / "b"), r = collect(root / "c");
  for (const auto& [name, text] : a) {
    ++compared;
    const bool same = b.count(name) && r.count(name) && b.at(name) == text && r.at(name) == text;
    if (!same) {
      ++mismatched;
      bad += " " + name;
    }
  }
  fs::remove_all(root);
  record(12, "re-run and manifest replay are byte-identical",
         mismatched == 0 && compared > 0 && a.size() == b.size() && a.size() == r.size(),
         std::to_string(compared) + " CSV files across 7 runs (6 experiments + sweep), " + std::to_string(mismatched) +
             " differ" + bad);
}

namespace {

class Summary : public ::testing::Environment {
 public:
  void TearDown() override {
    std::printf("\n==== acceptance summary ====\n");
    int passed = 0;
    for (int n = 1; n <= 12; ++n) {
      const auto it = verdicts().find(n);
      if (it == verdicts().end()) {
        std::printf("criterion %2d  NOT RUN\n", n);
        continue;
      }
      passed += it->second.pass;
      std::printf("criterion %2d  %s  %s: %s\n", n, it->second.pass ? "PASS" : "FAIL", it->second.title.c_str(),
                  it->second.detail.c_str());
    }
    std::printf("%d/12 criteria pass\n", passed);
  }
};

}  // namespace

int main(int argc, char** argv) {
  ::testing::InitGoogleTest(&argc, argv);
  ::testing::AddGlobalTestEnvironment(new Summary);
  return RUN_ALL_TESTS();
}
