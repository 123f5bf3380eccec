#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "augmented.hpp"
#include "ensemble.hpp"
#include "error.hpp"
#include "evolution.hpp"
#include "io.hpp"
#include "lattice.hpp"
#include "noise.hpp"
#include "spectral.hpp"

namespace malab {

using json = nlohmann::json;

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"diffusion-scan", "clt", "fkp-check", "spectral", "lr-bound",
                                              "assumptions"};
  return names;
}

/// Keys every experiment accepts, with their defaults.
inline json common_defaults() {
  return {{"lattice", {6}},
          {"kernel", "laplacian"},
          {"process", {{"type", "flip"}, {"T", 1.0}, {"p", 0.5}}},
          {"psi0", {{"type", "delta"}}},
          {"times", {1.0}},
          {"n_traj", 1000},
          {"seed", 1},
          {"integrator", "strang"},
          {"dt", 0.0},
          {"block", 16},
          {"boundary_threshold", 1e-6},
          {"sweep", json::object()}};
}

/// Experiment-specific keys and defaults; null means "derive" (documented per key).
inline json experiment_defaults(const std::string& name) {
  if (name == "assumptions") return {{"m", nullptr}};  // null: the kernel's own weight
  if (name == "spectral")
    return {{"z", json::array({0.05, 0.1})},
            {"probes", 16},
            {"h", 1e-3},
            {"diffusion_tolerance", 1e-5},
            {"growth_y", json::array({0.0, 0.2})},
            {"growth_times", json::array({0.5, 1.0, 2.0})}};
  if (name == "fkp-check")
    return {{"z", json::array({0.0, 0.5})}, {"integrator", "dense"}, {"times", {0.5, 1.0, 2.0}}, {"n_traj", 2000},
            {"sigmas", 3.0}};
  if (name == "diffusion-scan")
    return {{"spectral_lattice", {8}},
            {"t_check", nullptr},  // null: the last snapshot
            {"tolerance", 0.15},
            {"kurtosis_tolerance", 0.15},
            {"bump", {{"center", nullptr}, {"width", 1.0}}},  // null center: the origin
            {"bump_budget", 0.05},
            {"lambda", nullptr},  // exponential-moment check, only for exponential psi0; null: mu/2
            {"scaling_checks", true}};  // false: short-time runs that only check exponential moments
  if (name == "clt")
    return {{"spectral_lattice", {8}}, {"z", json::array({{{"re", 0.5}, {"im", 0.2}}})}, {"taus", {4, 8, 16, 32}},
            {"t", 1.0}, {"tolerance", 0.05}};
  if (name == "lr-bound")
    return {{"m", 0.5}, {"realizations", 20}, {"times", {0.5, 1.0, 2.0}}, {"include_frozen", true},
            {"integrator", "dense"}, {"slack", 1e-9}};
  throw ConfigError("experiment", "unknown experiment '" + name + "'");
}

namespace detail {

inline const json& field(const json& doc, const std::string& key, const std::string& path = "") {
  if (!doc.contains(key)) throw ConfigError(path.empty() ? key : path, "missing");
  return doc.at(key);
}

inline double number(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError(key, "expected a number, got " + v.dump());
  return v.get<double>();
}

inline long long integer(const json& v, const std::string& key) {
  if (!v.is_number_integer()) throw ConfigError(key, "expected an integer, got " + v.dump());
  return v.get<long long>();
}

inline std::vector<double> numbers(const json& v, const std::string& key) {
  if (!v.is_array()) throw ConfigError(key, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(number(v[i], key + "[" + std::to_string(i) + "]"));
  return out;
}

inline std::vector<int> integers(const json& v, const std::string& key) {
  if (!v.is_array()) throw ConfigError(key, "expected an array of integers");
  std::vector<int> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(static_cast<int>(integer(v[i], key + "[" + std::to_string(i) + "]")));
  return out;
}

inline cplx complex_entry(const json& v, const std::string& key) {
  if (v.is_number()) return v.get<double>();
  if (v.is_object()) {
    for (auto it = v.begin(); it != v.end(); ++it)
      if (it.key() != "re" && it.key() != "im") throw ConfigError(key + "." + it.key(), "unknown key");
    const double re = v.contains("re") ? number(v["re"], key + ".re") : 0.0;
    const double im = v.contains("im") ? number(v["im"], key + ".im") : 0.0;
    return {re, im};
  }
  throw ConfigError(key, "expected a number or {\"re\", \"im\"}");
}

inline json complex_json(cplx c) {
  if (c.imag() == 0.0) return c.real();
  return {{"re", c.real()}, {"im", c.imag()}};
}

}  // namespace detail

/// A z point: an array of d entries, or for d = 1 a bare entry. An entry is a
/// number or {"re": x, "im": y}.
inline ZVec parse_z(const json& v, int d, const std::string& key) {
  ZVec z;
  if (v.is_array()) {
    for (std::size_t i = 0; i < v.size(); ++i) z.push_back(detail::complex_entry(v[i], key + "[" + std::to_string(i) + "]"));
  } else {
    z.push_back(detail::complex_entry(v, key));
  }
  if (static_cast<int>(z.size()) != d)
    throw ConfigError(key, "z has " + std::to_string(z.size()) + " components, lattice dimension is " + std::to_string(d));
  return z;
}

inline json z_json(const ZVec& z) {
  if (z.size() == 1) return detail::complex_json(z[0]);
  json a = json::array();
  for (auto c : z) a.push_back(detail::complex_json(c));
  return a;
}

inline std::string z_label(const ZVec& z) {
  std::string s;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (i) s += ';';
    s += format_double(z[i].real());
    if (z[i].imag() != 0.0) s += (z[i].imag() < 0 ? "" : "+") + format_double(z[i].imag()) + "i";
  }
  return s;
}

/// Experiment configuration: the JSON document with every default filled in.
/// Typed views are built on demand and name the offending field on error.
class ExperimentConfig {
 public:
  ExperimentConfig() = default;

  /// `doc` with every default filled in; only the experiment name is checked,
  /// so overrides can still be applied before from_json.
  static json resolve(const json& doc) {
    if (!doc.is_object()) throw ConfigError("<root>", "configuration must be a JSON object");
    const auto& name_v = detail::field(doc, "experiment");
    if (!name_v.is_string()) throw ConfigError("experiment", "expected a string");
    const std::string name = name_v.get<std::string>();
    json resolved = common_defaults();
    const json extra = experiment_defaults(name);
    for (auto it = extra.begin(); it != extra.end(); ++it) resolved[it.key()] = it.value();
    for (auto it = doc.begin(); it != doc.end(); ++it) {
      if (it.key() != "experiment" && !resolved.contains(it.key()))
        throw ConfigError(it.key(), "unknown key for experiment '" + name + "'");
      resolved[it.key()] = it.value();
    }
    // nested defaults
    if (name == "diffusion-scan" && resolved["bump"].is_object()) {
      json b = {{"center", nullptr}, {"width", 1.0}};
      for (auto it = resolved["bump"].begin(); it != resolved["bump"].end(); ++it) {
        if (!b.contains(it.key())) throw ConfigError("bump." + it.key(), "unknown key");
        b[it.key()] = it.value();
      }
      resolved["bump"] = b;
    }
    return resolved;
  }

  /// Merges defaults into `doc` and checks every key and type.
  static ExperimentConfig from_json(const json& doc) {
    ExperimentConfig c;
    c.doc_ = resolve(doc);
    c.check();
    return c;
  }

  static ExperimentConfig parse(const std::string& text) {
    json doc;
    try {
      doc = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
    }
    return from_json(doc);
  }

  const json& doc() const { return doc_; }
  std::string experiment() const { return doc_["experiment"].get<std::string>(); }
  std::string canonical() const { return doc_.dump(); }
  std::uint64_t hash() const { return fnv1a64(canonical()); }
  std::string hash8() const { return hex64(hash()).substr(0, 8); }

  const json& at(const std::string& key) const { return detail::field(doc_, key); }
  bool is_null(const std::string& key) const { return at(key).is_null(); }
  double number(const std::string& key) const { return detail::number(at(key), key); }
  long long integer(const std::string& key) const { return detail::integer(at(key), key); }
  std::vector<double> numbers(const std::string& key) const { return detail::numbers(at(key), key); }
  bool boolean(const std::string& key) const {
    if (!at(key).is_boolean()) throw ConfigError(key, "expected true or false");
    return at(key).get<bool>();
  }

  Lattice lattice() const { return lattice_from(at("lattice"), "lattice"); }

  static Lattice lattice_from(const json& v, const std::string& key) {
    try {
      return Lattice(detail::integers(v, key));
    } catch (const DomainError& e) {
      throw ConfigError(key, e.what());
    }
  }

  HoppingKernel kernel() const {
    const json& k = at("kernel");
    const int d = static_cast<int>(at("lattice").size());
    try {
      if (k.is_string()) {
        if (k.get<std::string>() != "laplacian") throw ConfigError("kernel", "unknown preset " + k.dump());
        return HoppingKernel::laplacian(d);
      }
      if (!k.is_object()) throw ConfigError("kernel", "expected \"laplacian\" or an object");
      for (auto it = k.begin(); it != k.end(); ++it)
        if (it.key() != "preset" && it.key() != "terms" && it.key() != "m")
          throw ConfigError("kernel." + it.key(), "unknown key");
      const double m = k.contains("m") ? detail::number(k["m"], "kernel.m") : 1.0;
      if (k.contains("preset")) {
        if (k.contains("terms")) throw ConfigError("kernel", "give either preset or terms");
        if (k["preset"] != "laplacian") throw ConfigError("kernel.preset", "unknown preset " + k["preset"].dump());
        return HoppingKernel::laplacian(d, m);
      }
      const json& terms = detail::field(k, "terms", "kernel.terms");
      if (!terms.is_array()) throw ConfigError("kernel.terms", "expected an array of [offset..., re, im]");
      std::vector<HoppingTerm> out;
      for (std::size_t i = 0; i < terms.size(); ++i) {
        const std::string key = "kernel.terms[" + std::to_string(i) + "]";
        const json& t = terms[i];
        if (!t.is_array() || static_cast<int>(t.size()) != d + 2)
          throw ConfigError(key, "expected " + std::to_string(d) + " offsets followed by re, im");
        std::vector<int> off;
        for (int a = 0; a < d; ++a) off.push_back(static_cast<int>(detail::integer(t[a], key)));
        out.push_back({off, cplx(detail::number(t[d], key), detail::number(t[d + 1], key))});
      }
      return HoppingKernel(d, std::move(out), m);
    } catch (const DomainError& e) {
      throw ConfigError("kernel", e.what());
    }
  }

  NoiseProcess process() const {
    const json& p = at("process");
    if (!p.is_object()) throw ConfigError("process", "expected an object");
    const auto& type_v = detail::field(p, "type", "process.type");
    if (!type_v.is_string()) throw ConfigError("process.type", "expected a string");
    const std::string type = type_v.get<std::string>();
    std::set<std::string> allowed{"type", "T", "frozen"};
    if (type == "flip") allowed.insert("p");
    if (type == "resample") allowed.insert("nu");
    for (auto it = p.begin(); it != p.end(); ++it)
      if (!allowed.count(it.key())) throw ConfigError("process." + it.key(), "unknown key for type " + type);
    const double T = p.contains("T") ? detail::number(p["T"], "process.T") : 1.0;
    bool frozen = false;
    if (p.contains("frozen")) {
      if (!p["frozen"].is_boolean()) throw ConfigError("process.frozen", "expected true or false");
      frozen = p["frozen"].get<bool>();
    }
    try {
      if (type == "flip") return NoiseProcess(FlipProcess{T, p.contains("p") ? detail::number(p["p"], "process.p") : 0.5}, frozen);
      if (type == "resample") {
        const json& nu = detail::field(p, "nu", "process.nu");
        if (!nu.is_array()) throw ConfigError("process.nu", "expected [[value, prob], ...]");
        std::vector<std::pair<double, double>> pairs;
        for (std::size_t i = 0; i < nu.size(); ++i) {
          const std::string key = "process.nu[" + std::to_string(i) + "]";
          if (!nu[i].is_array() || nu[i].size() != 2) throw ConfigError(key, "expected [value, prob]");
          pairs.emplace_back(detail::number(nu[i][0], key), detail::number(nu[i][1], key));
        }
        return NoiseProcess(ResampleProcess{T, pairs}, frozen);
      }
      if (type == "brownian") return NoiseProcess(BrownianProcess{T}, frozen);
    } catch (const DomainError& e) {
      throw ConfigError("process", e.what());
    }
    throw ConfigError("process.type", "unknown process type '" + type + "'");
  }

  WaveFunction psi0(const Lattice& lat) const {
    const json& s = at("psi0");
    if (!s.is_object()) throw ConfigError("psi0", "expected an object");
    const auto& type_v = detail::field(s, "type", "psi0.type");
    if (!type_v.is_string()) throw ConfigError("psi0.type", "expected a string");
    const std::string type = type_v.get<std::string>();
    auto only = [&](std::set<std::string> keys) {
      keys.insert("type");
      for (auto it = s.begin(); it != s.end(); ++it)
        if (!keys.count(it.key())) throw ConfigError("psi0." + it.key(), "unknown key for type " + type);
    };
    try {
      if (type == "delta") {
        only({"at"});
        if (!s.contains("at")) return WaveFunction::delta(lat);
        const auto at_v = detail::integers(s["at"], "psi0.at");
        if (static_cast<int>(at_v.size()) != lat.dim()) throw ConfigError("psi0.at", "dimension mismatch");
        return WaveFunction::delta(lat, at_v);
      }
      if (type == "exponential") {
        only({"mu", "A"});
        return WaveFunction::exponential(lat, detail::number(detail::field(s, "mu", "psi0.mu"), "psi0.mu"),
                                         s.contains("A") ? detail::number(s["A"], "psi0.A") : 1.0);
      }
      if (type == "explicit") {
        only({"amplitudes", "profile"});
        const json& a = detail::field(s, "amplitudes", "psi0.amplitudes");
        if (!a.is_array()) throw ConfigError("psi0.amplitudes", "expected [[x..., re, im], ...]");
        WaveFunction w(lat);
        const int d = lat.dim();
        for (std::size_t i = 0; i < a.size(); ++i) {
          const std::string key = "psi0.amplitudes[" + std::to_string(i) + "]";
          if (!a[i].is_array() || static_cast<int>(a[i].size()) != d + 2)
            throw ConfigError(key, "expected " + std::to_string(d) + " coordinates followed by re, im");
          std::vector<int> x;
          for (int k = 0; k < d; ++k) x.push_back(static_cast<int>(detail::integer(a[i][k], key)));
          w.amp[lat.index(x)] += cplx(detail::number(a[i][d], key), detail::number(a[i][d + 1], key));
        }
        if (s.contains("profile")) {
          const json& p = s["profile"];
          w.profile = ExpProfile{detail::number(detail::field(p, "mu", "psi0.profile.mu"), "psi0.profile.mu"),
                                 detail::number(detail::field(p, "A", "psi0.profile.A"), "psi0.profile.A")};
          if (w.profile_sup(w.profile->mu) > w.profile->A * (1 + 1e-12))
            throw ConfigError("psi0.profile", "amplitudes violate the stated bound e^{mu|x|}|psi(x)| <= A");
        }
        return w;
      }
    } catch (const DomainError& e) {
      throw ConfigError("psi0", e.what());
    }
    throw ConfigError("psi0.type", "unknown initial state '" + type + "'");
  }

  std::vector<ZVec> z_points(const std::string& key = "z") const {
    const json& v = at(key);
    if (!v.is_array()) throw ConfigError(key, "expected an array of z points");
    const int d = static_cast<int>(at("lattice").size());
    std::vector<ZVec> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(parse_z(v[i], d, key + "[" + std::to_string(i) + "]"));
    return out;
  }

  Integrator integrator() const {
    const json& v = at("integrator");
    if (v == "dense") return Integrator::dense;
    if (v == "strang") return Integrator::strang;
    throw ConfigError("integrator", "expected \"dense\" or \"strang\"");
  }

  std::vector<double> times() const {
    auto t = numbers("times");
    if (t.empty()) throw ConfigError("times", "must be non-empty");
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!(t[i] >= 0.0)) throw ConfigError("times", "must be non-negative");
      if (i && t[i] <= t[i - 1]) throw ConfigError("times", "must be strictly increasing");
    }
    return t;
  }

  EvolutionSpec evolution(double t_final, std::vector<double> snapshots) const {
    EvolutionSpec s;
    s.kernel = kernel();
    s.process = process();
    s.t_final = t_final;
    s.dt = number("dt");
    if (s.dt < 0.0) throw ConfigError("dt", "must be non-negative (0 selects the default)");
    s.integrator = integrator();
    s.snapshots = std::move(snapshots);
    return s;
  }

  std::size_t n_traj() const {
    const auto n = integer("n_traj");
    if (n < 2) throw ConfigError("n_traj", "need at least 2 trajectories");
    return static_cast<std::size_t>(n);
  }
  std::uint64_t seed() const {
    const auto s = integer("seed");
    if (s < 0) throw ConfigError("seed", "must be non-negative");
    return static_cast<std::uint64_t>(s);
  }

  EnsembleOptions ensemble_options(unsigned threads) const {
    EnsembleOptions o;
    o.threads = threads;
    const auto b = integer("block");
    if (b < 1) throw ConfigError("block", "must be positive");
    o.block = static_cast<std::size_t>(b);
    o.boundary_threshold = number("boundary_threshold");
    return o;
  }

  /// The sweep as (dotted key, values) pairs in key order.
  std::vector<std::pair<std::string, std::vector<json>>> sweep() const {
    const json& s = at("sweep");
    if (!s.is_object()) throw ConfigError("sweep", "expected an object of key -> [values]");
    std::vector<std::pair<std::string, std::vector<json>>> out;
    for (auto it = s.begin(); it != s.end(); ++it) {
      if (!it.value().is_array() || it.value().empty())
        throw ConfigError("sweep." + it.key(), "expected a non-empty array of values");
      out.emplace_back(it.key(), std::vector<json>(it.value().begin(), it.value().end()));
    }
    return out;
  }

 private:
  void check() const {
    lattice();
    kernel().check_fits(lattice());
    process();
    psi0(lattice());
    integrator();
    times();
    n_traj();
    seed();
    ensemble_options(1);
    sweep();
    if (doc_.contains("z")) z_points();
  }

  json doc_;
};

/// Sets a dotted path ("process.T") in a JSON document. The value is parsed as
/// JSON when possible, otherwise taken as a string.
inline void set_path(json& doc, const std::string& path, const json& value) {
  json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError(path, "malformed key path");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part) || !(*node)[part].is_object()) (*node)[part] = json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "override must look like key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  set_path(doc, key, value);
}

struct Diagnostic {
  std::string level;  // "error" or "warning"
  std::string field;
  std::string message;
};

/// Static checks without running anything: the document parses, caps hold,
/// the light cone stays inside 0.4 L, z lies in the strip, and the
/// experiment supports the noise model.
inline std::vector<Diagnostic> validate(const json& doc) {
  std::vector<Diagnostic> out;
  ExperimentConfig c;
  try {
    c = ExperimentConfig::from_json(doc);
  } catch (const ConfigError& e) {
    out.push_back({"error", e.field(), e.what()});
    return out;
  } catch (const Error& e) {
    out.push_back({"error", "<root>", e.what()});
    return out;
  }
  const std::string name = c.experiment();
  const Lattice lat = c.lattice();
  const HoppingKernel K = c.kernel();
  const NoiseProcess pr = c.process();
  const WaveFunction psi = c.psi0(lat);

  const bool needs_jump = name == "spectral" || name == "fkp-check" || name == "diffusion-scan" || name == "clt";
  if (needs_jump && !pr.is_jump())
    out.push_back({"error", "process.type",
                   "experiment '" + name + "' needs the augmented operator, which does not exist for the Brownian model"});

  // configuration count of every augmented operator the run builds
  auto check_configs = [&](const Lattice& l, const std::string& field) {
    if (!pr.is_jump()) return;
    const double count = std::pow(double(pr.values().size()), double(l.size()));
    if (count > double(augmented_config_cap))
      out.push_back({"error", field,
                     "configuration space has " + format_double(count) + " states, cap is " +
                         std::to_string(augmented_config_cap)});
    else if (count * double(l.size()) > double(dense_spectrum_cap) && name == "spectral")
      out.push_back({"error", field,
                     "operator dimension " + format_double(count * double(l.size())) + " exceeds the dense cap " +
                         std::to_string(dense_spectrum_cap)});
  };
  if (name == "spectral" || name == "fkp-check") check_configs(lat, "lattice");
  if (name == "diffusion-scan" || name == "clt") {
    try {
      const Lattice sl = ExperimentConfig::lattice_from(c.at("spectral_lattice"), "spectral_lattice");
      if (sl.dim() != lat.dim()) out.push_back({"error", "spectral_lattice", "dimension differs from lattice"});
      check_configs(sl, "spectral_lattice");
    } catch (const ConfigError& e) {
      out.push_back({"error", e.field(), e.what()});
    }
  }
  if (c.integrator() == Integrator::dense && lat.size() > dense_site_cap)
    out.push_back({"error", "integrator",
                   "dense integrator on " + std::to_string(lat.size()) + " sites exceeds the cap " +
                       std::to_string(dense_site_cap)});

  // light cone against the wrap
  double t_max = c.times().back();
  double m = K.m();
  if (name == "lr-bound") m = c.number("m");
  if (name == "clt") {
    double tau_max = 0.0;
    for (double tau : c.numbers("taus")) tau_max = std::max(tau_max, tau);
    t_max = tau_max * c.number("t");
  }
  const double v = group_velocity(K, m), reach = t_max * v, limit = 0.4 * lat.min_extent();
  if (name != "spectral" && name != "assumptions" && !(reach < limit))
    out.push_back({name == "lr-bound" ? "error" : "warning", "times",
                   "t v = " + format_double(reach) + " (t = " + format_double(t_max) + ", v = " + format_double(v) +
                       ") reaches 0.4 L = " + format_double(limit) + "; wraparound may contaminate the results"});

  // analyticity strip
  if (c.doc().contains("z") && psi.profile) {
    const auto zs = c.z_points();
    for (std::size_t i = 0; i < zs.size(); ++i)
      if (max_imag(zs[i]) >= psi.profile->mu)
        out.push_back({"error", "z[" + std::to_string(i) + "]",
                       "|Im z| = " + format_double(max_imag(zs[i])) + " is outside the strip |Im z| < mu = " +
                           format_double(psi.profile->mu)});
  }
  if (name == "lr-bound" && c.number("m") < 0.0) out.push_back({"error", "m", "weight must be non-negative"});
  const auto base = out;
  auto seen = [&](const Diagnostic& d) {
    for (const auto& b : base)
      if (b.level == d.level && b.field == d.field && b.message == d.message) return true;
    return false;
  };
  for (const auto& [key, values] : c.sweep()) {
    json probe = c.doc();
    probe["sweep"] = json::object();
    for (const auto& val : values) {
      set_path(probe, key, val);
      for (const auto& d : validate(probe))
        if (!seen(d)) out.push_back({d.level, "sweep." + key + " -> " + d.field, d.message});
    }
  }
  return out;
}

}  // namespace malab
