// Command-line front end: run, validate, calibrate, report.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "fpelab/common.hpp"
#include "fpelab/experiment.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr int kOk = 0;
constexpr int kError = 1;
constexpr int kConfigInvalid = 2;
constexpr int kNumerical = 3;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int threads = 0;
  std::optional<double> K;
};

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw fpelab::ConfigError({"cannot open config file " + path});
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw fpelab::ConfigError({path + ": " + e.what()});
  }
}

fpelab::ExperimentConfig load(const Options& o) {
  json raw = fpelab::config_from_document(read_json(o.config));
  if (o.seed && raw.is_object()) raw["seed"] = *o.seed;
  if (!o.out.empty() && raw.is_object()) raw["output"] = o.out;
  return fpelab::validate_config(raw, fs::path(o.config).parent_path());
}

int cmd_validate(const Options& o) {
  const json raw = fpelab::config_from_document(read_json(o.config));
  const auto issues = fpelab::config_issues(raw, fs::path(o.config).parent_path());
  if (issues.empty()) {
    std::cout << "config valid: " << o.config << "\n";
    return kOk;
  }
  for (const auto& s : issues) std::cerr << "invalid: " << s << "\n";
  return kConfigInvalid;
}

int cmd_run(const Options& o) {
  const auto cfg = load(o);
  std::cerr << "running " << (cfg.example == fpelab::ExampleKind::NavierStokes ? "navier-stokes" : "linear-growth")
            << " M=" << cfg.M << " seed=" << cfg.seed << " -> " << cfg.output << "\n";
  const auto m = fpelab::run_experiment(cfg, o.threads);
  for (const auto& a : m.artifacts) std::cout << a.sha256 << "  " << a.file << "\n";
  std::cout << "manifest: " << (fs::path(cfg.output) / "manifest.json").string() << "\n";
  return kOk;
}

int cmd_calibrate(const Options& o) {
  auto cfg = load(o);
  if (!cfg.lambda.calibrate || o.K) {
    cfg.lambda.calibrate = true;
    if (o.K) cfg.lambda.K = *o.K;
  }
  const auto out = fpelab::resolve_lambda(cfg, o.threads);
  json j = out.to_json();
  j["K"] = cfg.lambda.K;
  std::cout << j.dump(2) << "\n";
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    std::ofstream f(fs::path(o.out) / "calibration.json");
    f << j.dump(2) << "\n";
  }
  return kOk;
}

int cmd_report(const Options& o) {
  fs::path dir = o.out;
  fs::path manifest_path = o.config;
  if (manifest_path.empty()) {
    if (dir.empty()) throw fpelab::ConfigError({"report needs --out <run dir> or --config <manifest>"});
    manifest_path = dir / "manifest.json";
  }
  if (dir.empty()) dir = manifest_path.parent_path();
  const auto m = fpelab::RunManifest::from_json(read_json(manifest_path.string()));
  const auto bad = fpelab::verify_manifest(m, dir);
  std::ifstream rin(dir / "residuals.json");
  if (rin) {
    const auto reps = json::parse(rin);
    std::cout << "test function            residual        std_error       bias\n";
    for (const auto& r : reps) {
      const auto rr = fpelab::ResidualReport::from_json(r);
      std::printf("%-24s %+.6e  %.6e  %+.3e\n", rr.test_fn_id.c_str(), rr.residual, rr.std_error, rr.bias_estimate);
    }
  }
  std::ifstream sin(dir / "summary.json");
  if (sin) {
    const auto s = json::parse(sin);
    if (s.contains("checks")) {
      for (const auto& [name, ok] : s.at("checks").items()) {
        std::cout << (ok.get<bool>() ? "ok    " : "FAILED") << " " << name << "\n";
      }
    }
  }
  if (!bad.empty()) {
    for (const auto& f : bad) std::cerr << "checksum mismatch: " << f << "\n";
    return kError;
  }
  std::cout << "all " << m.artifacts.size() << " artifact checksums match\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fokker-Planck experiment runner"};
  app.require_subcommand(1);
  Options o;
  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* c = sub->add_option("--config", o.config, "Experiment config or run manifest (JSON)");
    if (config_required) c->required();
    sub->add_option("--seed", o.seed, "Override the config seed");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--threads", o.threads, "Worker threads (0 = hardware concurrency)")->check(CLI::NonNegativeNumber);
  };
  auto* run = app.add_subcommand("run", "Run the experiment pipeline and write artifacts plus manifest");
  add_common(run, true);
  auto* validate = app.add_subcommand("validate", "Check a config and list every violated requirement");
  add_common(validate, true);
  auto* calibrate = app.add_subcommand("calibrate", "Choose lambda_0 for the configured noise");
  add_common(calibrate, true);
  calibrate->add_option("--K", o.K, "Exponential-moment level (overrides the config)");
  auto* report = app.add_subcommand("report", "Verify artifact checksums and summarise a finished run");
  add_common(report, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigInvalid;
  }

  try {
    if (run->parsed()) return cmd_run(o);
    if (validate->parsed()) return cmd_validate(o);
    if (calibrate->parsed()) return cmd_calibrate(o);
    return cmd_report(o);
  } catch (const fpelab::ConfigError& e) {
    for (const auto& s : e.issues()) std::cerr << "invalid: " << s << "\n";
    return kConfigInvalid;
  } catch (const fpelab::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kError;
  }
}
