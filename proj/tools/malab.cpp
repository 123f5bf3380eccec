#include <CLI11.hpp>

#include <iostream>

#include "malab/experiment.hpp"

namespace {

// 0 all checks pass, 1 a check (or a numerical routine) failed, 2 the
// configuration asks for something the modules refuse.
int run_command(const std::string& path, const std::vector<std::string>& sets, unsigned threads,
                const std::string& outdir) {
  try {
    const auto cfg = malab::load_config(malab::read_file(path), sets);
    const auto m = malab::run(cfg, outdir, threads);
    std::size_t failed = 0;
    const auto print = [&](const malab::json& checks) {
      for (const auto& c : checks) {
        const bool pass = c["pass"].get<bool>();
        failed += !pass;
        std::cout << (pass ? "PASS " : "FAIL ") << c["name"].get<std::string>() << "  value "
                  << malab::format_double(c["value"].get<double>()) << "  limit "
                  << malab::format_double(c["limit"].get<double>()) << "\n";
      }
    };
    if (m.doc.contains("sweep_runs")) {
      for (const auto& d : m.doc["sweep_runs"]) {
        std::cout << "[" << d.get<std::string>() << "]\n";
        print(malab::json::parse(malab::read_file(std::filesystem::path(outdir) / d.get<std::string>() / "manifest.json"))["checks"]);
      }
    } else {
      print(m.doc["checks"]);
    }
    std::cout << "wrote " << m.dir.string() << "\n";
    return m.all_pass ? 0 : 1;
  } catch (const malab::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 1;
  } catch (const malab::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const CLI::Error&) {
    throw;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

int validate_command(const std::string& path) {
  std::string text;
  try {
    text = malab::read_file(path);
  } catch (const malab::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  malab::json doc;
  try {
    doc = malab::json::parse(text);
  } catch (const malab::json::parse_error& e) {
    std::cout << "error <root>: invalid JSON: " << e.what() << "\n";
    return 2;
  }
  if (doc.is_object() && doc.contains("manifest_version") && doc.contains("config")) doc = doc["config"];
  bool errors = false;
  for (const auto& d : malab::validate(doc)) {
    errors = errors || d.level == "error";
    std::cout << d.level << " " << d.field << ": " << d.message << "\n";
  }
  if (!errors) std::cout << "ok\n";
  return errors ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Markov-Anderson lattice experiments"};
  app.require_subcommand(1);

  std::string run_path, outdir = "runs";
  std::vector<std::string> sets;
  unsigned threads = 0;
  auto* run = app.add_subcommand("run", "run an experiment from a config or a manifest");
  run->add_option("config", run_path, "config.json or manifest.json")->required()->check(CLI::ExistingFile);
  run->add_option("--set", sets, "override key=value (dotted keys, JSON values)");
  run->add_option("--threads", threads, "worker cap, 0 = hardware concurrency");
  run->add_option("--outdir", outdir, "output root");

  std::string validate_path;
  auto* val = app.add_subcommand("validate", "static checks on a config");
  val->add_option("config", validate_path)->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  if (*run) return run_command(run_path, sets, threads, outdir);
  return validate_command(validate_path);
}
