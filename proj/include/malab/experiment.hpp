#pragma once

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <string>
#include <vector>

#include "augmented.hpp"
#include "config.hpp"
#include "ensemble.hpp"
#include "group_velocity.hpp"
#include "io.hpp"
#include "spectral.hpp"

namespace malab {

inline constexpr const char* code_version = "malab 0.1.0";

struct Check {
  std::string name;
  bool pass = false;
  double value = 0.0;
  double limit = 0.0;
  std::string detail;
};

struct ExperimentOutput {
  std::vector<std::pair<std::string, CsvTable>> files;
  std::vector<Check> checks;
  bool all_pass() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return true;
  }
};

struct RunManifest {
  json doc;
  std::filesystem::path dir;
  bool all_pass = false;
};

namespace detail {

inline CsvTable checks_table(const std::vector<Check>& checks) {
  CsvTable t({"check", "pass", "value", "limit", "detail"});
  for (const auto& c : checks) t.row({c.name, c.pass ? "true" : "false", c.value, c.limit, c.detail});
  return t;
}

inline Check at_most(std::string name, double value, double limit, std::string detail = "") {
  return {std::move(name), value <= limit, value, limit, std::move(detail)};
}
inline Check above(std::string name, double value, double limit, std::string detail = "") {
  return {std::move(name), value > limit, value, limit, std::move(detail)};
}

inline ExperimentOutput run_assumptions(const ExperimentConfig& c) {
  ExperimentOutput out;
  const Lattice lat = c.lattice();
  const HoppingKernel K = c.kernel();
  const NoiseProcess pr = c.process();
  const double m = c.is_null("m") ? K.m() : c.number("m");
  const auto a = check_assumptions(K, m);
  out.checks.push_back({"hopping_self_adjoint", a.self_adjoint, a.self_adjoint ? 1.0 : 0.0, 1.0, ""});
  out.checks.push_back({"exponentially_bounded", a.exponentially_bounded, a.velocity, 0.0,
                        "v = sum e^{m|zeta|}|h(zeta)| at m = " + format_double(m)});
  out.checks.push_back({"hopping_non_degenerate", a.non_degenerate, double(a.support_rank), double(K.dim()),
                        "rank of the hopping support"});
  if (pr.is_jump() && !pr.frozen()) {
    const auto g = generator_report(pr, lat);
    out.checks.push_back(above("generator_gap", g.gap, 0.0, "T = " + format_double(pr.T())));
    out.checks.push_back({"generator_sector", std::isfinite(g.q), g.q, 0.0, "slope q of the numerical-range sector"});
    out.checks.push_back(above("potential_non_degenerate", g.chi, 0.0,
                               "chi = min_x ||B^{-1}(v_x - v_0)||, attained at site " + std::to_string(g.chi_site)));
  }
  out.files.emplace_back("assumptions.csv", checks_table(out.checks));
  return out;
}

inline ExperimentOutput run_spectral(const ExperimentConfig& c) {
  ExperimentOutput out;
  const Lattice lat = c.lattice();
  const HoppingKernel K = c.kernel();
  const NoiseProcess pr = c.process();
  const int d = lat.dim();
  const int n_probes = static_cast<int>(c.integer("probes"));
  const ZVec zero(d, 0.0);

  const auto op0 = build_augmented(K, pr, lat, zero);
  const auto bc = block_check(op0);
  out.checks.push_back(at_most("kernel_vector_right", bc.kernel_right, 1e-12));
  out.checks.push_back(at_most("kernel_vector_left", bc.kernel_left, 1e-12));
  out.checks.push_back(at_most("p0_v_p0", bc.p0vp0, 0.0));
  out.checks.push_back(at_most("p0_k_p0_stencil", bc.p0kp0, 1e-12));

  CsvTable spectrum({"z", "re", "im"});
  CsvTable eig({"z", "E_re", "E_im", "gap", "wedge_slope", "gamma_prime", "resolvent_constant"});
  CsvTable probes({"z", "w_re", "w_im", "norm", "distance", "bound"});
  const auto r0 = spectral_report(op0, n_probes);
  auto record = [&](const SpectralReport& r) {
    const std::string zl = z_label(r.z);
    for (auto w : r.spectrum) spectrum.row({zl, w.real(), w.imag()});
    eig.row({zl, r.E.real(), r.E.imag(), r.gap, r.wedge.slope, r.gamma_prime(), r.resolvent_constant()});
  };
  record(r0);
  for (const auto& p : r0.probes) probes.row({z_label(zero), p.w.real(), p.w.imag(), p.norm, p.distance, ""});
  out.checks.push_back(at_most("E0_zero", std::abs(r0.E), 1e-10));
  out.checks.push_back(above("gap_positive", r0.gap, 0.0));
  out.checks.push_back(above("wedge_gamma_prime", r0.gamma_prime(), 0.0));

  const auto cert = gap_certificate(op0, r0.gap);
  out.checks.push_back({"gap_certificate_block", r0.gap >= cert.bound_block, r0.gap, cert.bound_block,
                        "alpha from (P1 L0 P1)^{-1} W = " + format_double(cert.alpha_block)});
  out.checks.push_back({"gap_certificate_markov", r0.gap >= cert.bound_markov, r0.gap, cert.bound_markov,
                        "alpha from B^{-1} W = " + format_double(cert.alpha_markov)});

  for (const auto& z : c.z_points()) {
    const auto opz = build_augmented(K, pr, lat, z);
    Eigen::MatrixXcd Tz;
    const auto rz = spectral_report(opz, n_probes, dense_spectrum_cap, &Tz);
    record(rz);
    const std::string zl = z_label(z);
    out.checks.push_back(at_most("E_in_disk z=" + zl, std::abs(rz.E), r0.gap / 4, "radius gap(0)/4"));
    out.checks.push_back(above("wedge_gamma_prime z=" + zl, rz.gamma_prime(), 0.0));
    try {
      const auto pp = perturbed_resolvent_probes(r0, op0, opz, dense_spectrum_cap, &Tz);
      bool ok = true;
      double worst = 0.0;
      for (const auto& p : pp) {
        probes.row({zl, p.w.real(), p.w.imag(), p.norm, p.distance, p.bound});
        ok = ok && p.ok;
        worst = std::max(worst, p.norm / p.bound);
      }
      out.checks.push_back({"resolvent_bound z=" + zl, ok, worst, 1.0, "max norm / (C/(d - C||L_z - L_0||))"});
    } catch (const DomainError&) {
      // outside the neighbourhood where the z = 0 constant says anything
      for (const auto& p : rz.probes) probes.row({zl, p.w.real(), p.w.imag(), p.norm, p.distance, ""});
    }
  }

  CsvTable diff({"method", "i", "j", "D"});
  const double h = c.number("h");
  const auto f = diffusion_matrix(K, pr, lat, DiffusionMethod::formula, h);
  const auto H = diffusion_matrix(K, pr, lat, DiffusionMethod::hessian, h);
  for (const auto* D : {&f, &H})
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) diff.row({to_string(D->method), (long long)i, (long long)j, D->D(i, j)});
  const double scale = f.D.cwiseAbs().maxCoeff();
  out.checks.push_back(at_most("diffusion_formula_vs_hessian", (f.D - H.D).cwiseAbs().maxCoeff() / scale,
                               c.number("diffusion_tolerance"), "max entry difference / max |D|"));
  out.checks.push_back(at_most("diffusion_symmetric", f.asymmetry / scale, 1e-12));
  out.checks.push_back(above("diffusion_positive_definite", f.min_eigenvalue, 0.0));
  out.checks.push_back(at_most("E_gradient_at_zero", H.gradient.cwiseAbs().maxCoeff(), 1e-8));

  CsvTable growth({"y", "t", "norm", "bound", "pass"});
  for (double y : c.numbers("growth_y")) {
    ZVec z(d, 0.0);
    z[0] = cplx(0.0, y);
    const auto g = semigroup_growth_check(build_augmented(K, pr, lat, z), c.numbers("growth_times"));
    for (const auto& r : g.rows) growth.row({y, r.t, r.norm, r.bound, r.ok ? "true" : "false"});
    double worst = 0.0;
    for (const auto& r : g.rows) worst = std::max(worst, r.norm / r.bound);
    out.checks.push_back({"semigroup_growth y=" + format_double(y), g.ok(), worst, 1.0 + 1e-12,
                          "max ||e^{-tL}|| / e^{t alpha(y)}, alpha = " + format_double(g.alpha)});
  }

  out.files.emplace_back("spectrum.csv", std::move(spectrum));
  out.files.emplace_back("eigen.csv", std::move(eig));
  out.files.emplace_back("probes.csv", std::move(probes));
  out.files.emplace_back("diffusion.csv", std::move(diff));
  out.files.emplace_back("growth.csv", std::move(growth));
  out.files.emplace_back("checks.csv", checks_table(out.checks));
  return out;
}

inline ExperimentOutput run_fkp_check(const ExperimentConfig& c, unsigned threads) {
  ExperimentOutput out;
  const Lattice lat = c.lattice();
  const auto psi = c.psi0(lat);
  const auto times = c.times();
  const auto zs = c.z_points();
  const double sigmas = c.number("sigmas");
  const auto spec = c.evolution(times.back(), times);
  const auto mc = char_fn_monte_carlo(psi, spec, zs, c.n_traj(), c.seed(), threads,
                                      c.ensemble_options(threads).block);
  CsvTable t({"t", "z", "mc_re", "mc_im", "se", "fkp_re", "fkp_im", "deviation_over_se", "plain_re", "plain_im"});
  for (std::size_t j = 0; j < zs.size(); ++j) {
    const auto op = build_augmented(spec.kernel, spec.process, lat, zs[j]);
    for (std::size_t ti = 0; ti < mc.times.size(); ++ti) {
      const cplx f = fkp_element(op, mc.times[ti], psi);
      const auto& e = mc.twisted[ti][j];
      const double dev = std::abs(e.mean - f);
      const double allowed = sigmas * e.se() + 1e-9;
      const std::string label = "t=" + format_double(mc.times[ti]) + " z=" + z_label(zs[j]);
      t.row({mc.times[ti], z_label(zs[j]), e.mean.real(), e.mean.imag(), e.se(), f.real(), f.imag(),
             e.se() > 0 ? dev / e.se() : 0.0, mc.plain[ti][j].mean.real(), mc.plain[ti][j].mean.imag()});
      out.checks.push_back(at_most("fkp " + label, dev, allowed, format_double(sigmas) + " standard errors + 1e-9"));
    }
  }
  out.files.emplace_back("fkp.csv", std::move(t));
  out.files.emplace_back("checks.csv", checks_table(out.checks));
  return out;
}

inline double gaussian_kurtosis(const Eigen::MatrixXd& D) {
  const double tr = D.trace();
  return (tr * tr + 2.0 * (D * D).trace()) / (tr * tr);
}

inline ExperimentOutput run_diffusion_scan(const ExperimentConfig& c, unsigned threads) {
  ExperimentOutput out;
  const Lattice lat = c.lattice();
  const Lattice slat = ExperimentConfig::lattice_from(c.at("spectral_lattice"), "spectral_lattice");
  const auto psi = c.psi0(lat);
  const auto times = c.times();
  const auto spec = c.evolution(times.back(), times);
  const int d = lat.dim();
  const double t_check = c.is_null("t_check") ? times.back() : c.number("t_check");
  if (!(t_check > 0.0)) throw ConfigError("t_check", "must be positive");

  const auto Dm = diffusion_matrix(spec.kernel, spec.process, slat, DiffusionMethod::formula);
  const Eigen::MatrixXd& D = Dm.D;
  CsvTable dt({"i", "j", "D"});
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) dt.row({(long long)i, (long long)j, D(i, j)});

  GaussianBump bump;
  const json& b = c.at("bump");
  bump.width = detail::number(b["width"], "bump.width");
  bump.center = b["center"].is_null() ? std::vector<double>(d, 0.0) : detail::numbers(b["center"], "bump.center");
  if (static_cast<int>(bump.center.size()) != d) throw ConfigError("bump.center", "dimension mismatch");

  auto opt = c.ensemble_options(threads);
  opt.observables.push_back(moment_observable("m2", 2));
  opt.observables.push_back(moment_observable("m4", 4));
  opt.observables.push_back(clt_observable("bump", bump));
  const auto est = run_ensemble(psi, spec, c.n_traj(), c.seed(), opt);

  CsvTable mt({"t", "m2", "m2_se", "m4", "m4_se", "m2_over_t", "kurtosis", "bump", "bump_se", "boundary_mass"});
  for (std::size_t ti = 0; ti < est.times.size(); ++ti) {
    const auto& m2 = est.observable("m2", ti);
    const auto& m4 = est.observable("m4", ti);
    const auto& bb = est.observable("bump", ti);
    const double t = est.times[ti];
    mt.row({t, m2.mean.real(), m2.se_re, m4.mean.real(), m4.se_re, t > 0 ? m2.mean.real() / t : 0.0,
            m2.mean.real() > 0 ? m4.mean.real() / (m2.mean.real() * m2.mean.real()) : 0.0, bb.mean.real(), bb.se_re,
            est.boundary_mass[ti]});
  }
  const std::size_t ti = est.time_index(t_check);
  const double m2 = est.observable("m2", ti).mean.real(), m4 = est.observable("m4", ti).mean.real();
  const double trD = D.trace(), n0 = est.norm2_0;
  if (c.boolean("scaling_checks")) {
    out.checks.push_back(at_most("diffusive_scaling", std::abs(m2 / t_check / n0 - trD) / trD, c.number("tolerance"),
                                 "|m2/t - tr D| / tr D at t = " + format_double(t_check) + ", tr D = " + format_double(trD)));
    const double kref = gaussian_kurtosis(D), kurt = m4 * n0 / (m2 * m2);
    out.checks.push_back(at_most("kurtosis", std::abs(kurt / kref - 1.0), c.number("kurtosis_tolerance"),
                                 "m4/m2^2 = " + format_double(kurt) + " vs Gaussian " + format_double(kref)));
    const auto& be = est.observable("bump", ti);
    const double rhs = n0 * gaussian_expectation(bump, D);
    out.checks.push_back(at_most("bump_functional", std::abs(be.mean.real() - rhs),
                                 3 * be.se_re + c.number("bump_budget") * rhs,
                                 "lhs " + format_double(be.mean.real()) + " rhs " + format_double(rhs)));
    out.checks.push_back(at_most("boundary_mass", est.boundary_mass[ti], est.boundary_threshold,
                                 "mass with |x_i| > 0.4 L_i at t = " + format_double(t_check)));
  }

  if (psi.profile) {
    const double lambda = c.is_null("lambda") ? psi.profile->mu / 2 : c.number("lambda");
    const auto em = exp_moment_check(est, lambda, spec.kernel, spec.kernel.m());
    CsvTable et({"t", "pointwise", "pointwise_bound", "lambda", "weighted_sum", "sum_bound", "pass"});
    for (const auto& r : em.rows)
      et.row({r.t, r.pointwise, r.pointwise_bound, r.lambda, r.weighted_sum, r.sum_bound, r.pass ? "true" : "false"});
    double worst = 0.0;
    for (const auto& r : em.rows) worst = std::max(worst, r.pointwise / r.pointwise_bound);
    out.checks.push_back({"exp_moment_bound", em.all_pass(), worst, 1.0, "max sup_x e^{mu|x|}E|psi| / A e^{vt}"});
    out.files.emplace_back("expmoment.csv", std::move(et));
  }
  out.files.emplace_back("diffusion.csv", std::move(dt));
  out.files.emplace_back("moments.csv", std::move(mt));
  out.files.emplace_back("checks.csv", checks_table(out.checks));
  return out;
}

inline ExperimentOutput run_clt(const ExperimentConfig& c, unsigned threads) {
  ExperimentOutput out;
  const Lattice lat = c.lattice();
  const Lattice slat = ExperimentConfig::lattice_from(c.at("spectral_lattice"), "spectral_lattice");
  const auto psi = c.psi0(lat);
  const auto zs = c.z_points();
  auto taus = c.numbers("taus");
  std::sort(taus.begin(), taus.end());
  const double t = c.number("t");
  if (!(t > 0.0)) throw ConfigError("t", "must be positive");
  for (double tau : taus)
    if (!(tau > 0.0)) throw ConfigError("taus", "must be positive");
  std::vector<double> snaps;
  for (double tau : taus) snaps.push_back(tau * t);
  snaps.erase(std::unique(snaps.begin(), snaps.end()), snaps.end());
  const auto spec = c.evolution(snaps.back(), snaps);
  const auto D = diffusion_matrix(spec.kernel, spec.process, slat, DiffusionMethod::formula).D;

  auto opt = c.ensemble_options(threads);
  for (std::size_t j = 0; j < zs.size(); ++j)
    for (double tau : taus) {
      ZVec zs_tau = zs[j];
      for (auto& v : zs_tau) v /= std::sqrt(tau);
      opt.observables.push_back(char_fn_observable("z" + std::to_string(j) + " tau=" + format_double(tau), zs_tau));
    }
  for (const auto& z : zs) check_strip(z, psi.profile, "clt");
  const auto est = run_ensemble(psi, spec, c.n_traj(), c.seed(), opt);

  CsvTable ct({"z", "tau", "t", "M_re", "M_im", "se", "limit_re", "limit_im", "error", "boundary_mass"});
  const double n0 = est.norm2_0;
  for (std::size_t j = 0; j < zs.size(); ++j) {
    cplx zDz = 0.0;  // holomorphic bilinear form
    for (std::size_t a = 0; a < zs[j].size(); ++a)
      for (std::size_t b = 0; b < zs[j].size(); ++b) zDz += zs[j][a] * D(a, b) * zs[j][b];
    const cplx limit = n0 * std::exp(-(t / 2) * zDz);
    std::vector<double> errs;
    for (double tau : taus) {
      const std::size_t ti = est.time_index(tau * t);
      const auto& e = est.observable("z" + std::to_string(j) + " tau=" + format_double(tau), ti);
      const double err = std::abs(e.mean - limit);
      errs.push_back(err);
      ct.row({z_label(zs[j]), tau, t, e.mean.real(), e.mean.imag(), e.se(), limit.real(), limit.imag(), err,
              est.boundary_mass[ti]});
    }
    double worst = 0.0;
    for (std::size_t k = 1; k < errs.size(); ++k) worst = std::max(worst, errs[k] / errs[k - 1]);
    out.checks.push_back({"decreasing_in_tau z=" + z_label(zs[j]), worst < 1.0, worst, 1.0,
                          "max err(tau_{k+1}) / err(tau_k)"});
    out.checks.push_back(at_most("final_error z=" + z_label(zs[j]), errs.back(), c.number("tolerance"),
                                 "|M_{tau t}(z/sqrt tau) - e^{-(t/2) z.Dz}| at tau = " + format_double(taus.back())));
  }
  out.files.emplace_back("clt.csv", std::move(ct));
  out.files.emplace_back("checks.csv", checks_table(out.checks));
  return out;
}

inline ExperimentOutput run_lr_bound(const ExperimentConfig& c, unsigned threads) {
  ExperimentOutput out;
  const Lattice lat = c.lattice();
  const HoppingKernel K = c.kernel();
  const NoiseProcess pr = c.process();
  const double m = c.number("m"), slack = c.number("slack");
  const auto n = c.integer("realizations");
  if (n < 1) throw ConfigError("realizations", "must be positive");
  std::vector<std::pair<std::string, NoiseProcess>> models{{pr.frozen() ? "frozen" : "noise", pr}};
  if (c.boolean("include_frozen") && !pr.frozen()) models.emplace_back("frozen", pr.as_frozen());
  CsvTable t({"model", "realization", "t", "y", "ratio"});
  for (const auto& [name, p] : models) {
    const auto rep = lr_check(K, p, lat, m, c.times(), static_cast<std::size_t>(n), c.seed(), threads, c.integrator());
    for (const auto& r : rep.rows) t.row({name, (long long)r.realization, r.t, (long long)r.y, r.ratio});
    out.checks.push_back(at_most("lr_ratio " + name, rep.max_ratio, 1.0 + slack,
                                 "v = " + format_double(rep.v) + " at m = " + format_double(m)));
    out.checks.push_back(above("lr_ratio_positive " + name, rep.min_ratio, 0.0));
  }
  out.files.emplace_back("lr.csv", std::move(t));
  out.files.emplace_back("checks.csv", checks_table(out.checks));
  return out;
}

inline std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

/// Runs one experiment in memory; nothing is written.
inline ExperimentOutput run_experiment(const ExperimentConfig& c, unsigned threads = 0) {
  const std::string name = c.experiment();
  if (name == "assumptions") return detail::run_assumptions(c);
  if (name == "spectral") return detail::run_spectral(c);
  if (name == "fkp-check") return detail::run_fkp_check(c, threads);
  if (name == "diffusion-scan") return detail::run_diffusion_scan(c, threads);
  if (name == "clt") return detail::run_clt(c, threads);
  if (name == "lr-bound") return detail::run_lr_bound(c, threads);
  throw ConfigError("experiment", "unknown experiment '" + name + "'");
}

inline std::filesystem::path run_directory(const ExperimentConfig& c, const std::filesystem::path& outdir) {
  return outdir / (c.experiment() + "-" + c.hash8());
}

namespace detail {

inline RunManifest run_single(const ExperimentConfig& c, const std::filesystem::path& outdir, unsigned threads) {
  const auto start = std::chrono::steady_clock::now();
  const std::string started = utc_timestamp();
  auto result = run_experiment(c, threads);
  const auto dir = run_directory(c, outdir);
  json files = json::array();
  for (const auto& [name, table] : result.files) {
    write_atomic(dir / name, table.str());
    files.push_back({{"name", name}, {"bytes", table.str().size()}, {"fnv1a", hex64(fnv1a64(table.str()))},
                     {"rows", table.rows() - 1}});
  }
  json checks = json::array();
  for (const auto& ch : result.checks)
    checks.push_back({{"name", ch.name}, {"pass", ch.pass}, {"value", ch.value}, {"limit", ch.limit},
                      {"detail", ch.detail}});
  RunManifest m;
  m.dir = dir;
  m.all_pass = result.all_pass();
  m.doc = {{"manifest_version", 1},
           {"experiment", c.experiment()},
           {"config_hash", hex64(c.hash())},
           {"code_version", code_version},
           {"seeds", {{"master", c.seed()}}},
           {"started", started},
           {"wall_time_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()},
           {"threads", threads},
           {"all_pass", m.all_pass},
           {"checks", checks},
           {"files", files},
           {"config", c.doc()}};
  write_atomic(dir / "manifest.json", m.doc.dump(2) + "\n");
  return m;
}

}  // namespace detail

/// Runs an experiment (or every point of its sweep) and writes
/// <outdir>/<experiment>-<hash8>/ with CSV outputs and manifest.json. A sweep
/// writes one directory per point plus the parent directory with summary.csv.
inline RunManifest run(const ExperimentConfig& c, const std::filesystem::path& outdir, unsigned threads = 0) {
  const auto sweep = c.sweep();
  if (sweep.empty()) return detail::run_single(c, outdir, threads);

  const auto start = std::chrono::steady_clock::now();
  const std::string started = detail::utc_timestamp();
  std::vector<std::size_t> idx(sweep.size(), 0);
  std::vector<std::string> header{"run"};
  for (const auto& [key, values] : sweep) header.push_back(key);
  for (const char* h : {"directory", "check", "pass", "value", "limit"}) header.emplace_back(h);
  CsvTable summary(header);
  json children = json::array();
  bool all_pass = true;
  for (long long run_no = 0;; ++run_no) {
    json doc = c.doc();
    doc["sweep"] = json::object();
    std::vector<CsvCell> point{run_no};
    for (std::size_t k = 0; k < sweep.size(); ++k) {
      set_path(doc, sweep[k].first, sweep[k].second[idx[k]]);
      point.push_back(sweep[k].second[idx[k]].dump());
    }
    const auto child = ExperimentConfig::from_json(doc);
    const auto m = detail::run_single(child, outdir, threads);
    all_pass = all_pass && m.all_pass;
    const std::string dir = m.dir.filename().string();
    children.push_back(dir);
    for (const auto& ch : m.doc["checks"]) {
      auto row = point;
      row.push_back(dir);
      row.push_back(ch["name"].get<std::string>());
      row.push_back(ch["pass"].get<bool>() ? "true" : "false");
      row.push_back(ch["value"].get<double>());
      row.push_back(ch["limit"].get<double>());
      summary.row(row);
    }
    std::size_t k = 0;
    while (k < sweep.size() && ++idx[k] == sweep[k].second.size()) idx[k++] = 0;
    if (k == sweep.size()) break;
  }
  RunManifest m;
  m.dir = run_directory(c, outdir);
  m.all_pass = all_pass;
  write_atomic(m.dir / "summary.csv", summary.str());
  m.doc = {{"manifest_version", 1},
           {"experiment", c.experiment()},
           {"config_hash", hex64(c.hash())},
           {"code_version", code_version},
           {"seeds", {{"master", c.seed()}}},
           {"started", started},
           {"wall_time_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()},
           {"threads", threads},
           {"all_pass", all_pass},
           {"sweep_runs", children},
           {"files", json::array({{{"name", "summary.csv"},
                                   {"bytes", summary.str().size()},
                                   {"fnv1a", hex64(fnv1a64(summary.str()))},
                                   {"rows", summary.rows() - 1}}})},
           {"config", c.doc()}};
  write_atomic(m.dir / "manifest.json", m.doc.dump(2) + "\n");
  return m;
}

/// The configuration stored in a manifest, for replay.
inline ExperimentConfig config_from_manifest(const json& manifest) {
  if (!manifest.is_object() || !manifest.contains("config")) throw ConfigError("config", "manifest has no config");
  return ExperimentConfig::from_json(manifest["config"]);
}

/// A document is either a configuration or a manifest wrapping one.
inline ExperimentConfig load_config(const std::string& text, const std::vector<std::string>& overrides = {}) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  if (doc.is_object() && doc.contains("manifest_version")) {
    if (!doc.contains("config")) throw ConfigError("config", "manifest has no config");
    doc = doc["config"];
  }
  if (overrides.empty()) return ExperimentConfig::from_json(doc);
  // overrides act on the resolved document, so "process.T=2" keeps the default type
  doc = ExperimentConfig::resolve(doc);
  for (const auto& o : overrides) apply_override(doc, o);
  return ExperimentConfig::from_json(doc);
}

}  // namespace malab
