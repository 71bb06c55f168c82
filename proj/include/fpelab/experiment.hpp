#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpelab/common.hpp"
#include "fpelab/drift.hpp"
#include "fpelab/galerkin.hpp"
#include "fpelab/measure.hpp"
#include "fpelab/ou_noise.hpp"

namespace fpelab {

enum class ExampleKind { LinearGrowth, NavierStokes };

struct LambdaPolicy {
  bool calibrate = false;
  double value = 0.0;   // fixed lambda
  double K = 1.0;       // calibrate(K)
  std::vector<double> grid{0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0};
  std::size_t pilot_paths = 400;
};

struct MomentScanSpec {
  bool enabled = false;
  double p = 2.5;
  std::vector<std::size_t> n_list;
  std::size_t paths = 0;  // 0 means M
};

struct ExperimentConfig {
  ExampleKind example = ExampleKind::LinearGrowth;
  // Navier-Stokes geometry
  int d = 2;
  double kmax = 2.0;
  double epsilon = 0.5;
  double nu = 1.0;
  // Linear-growth model on an abstract spectrum alpha_i^2 = i^power, a^i = noise * i^-noise_decay
  std::string growth_map = "tanh";
  double growth_constant = 1.0;
  double power = 2.0;
  double noise = 1.0;
  double noise_decay = 0.0;

  double T = 0.5;
  double dt_noise = 0.01;
  double dt_solver = 0.0;
  std::size_t n_v = 2;
  std::size_t n_z = 2;
  std::size_t M = 100;
  std::uint64_t seed = 0;
  SolverMethod method = SolverMethod::ExponentialEuler;

  LambdaPolicy lambda;
  InitialMeasure initial = InitialMeasure::point({0.0});
  LiftSpec lift;
  double suite_z_scale = 0.3;
  std::vector<SplitTestFn> suite;  // empty means the default suite
  MomentScanSpec moments;
  std::vector<std::size_t> tightness_n_list;
  double gamma_theta = 0.25;
  std::string output = "out";

  nlohmann::json to_json() const;
};

/// Checks the raw document and returns the parsed config, or throws ConfigError listing every problem.
/// Relative empirical-file paths are resolved against base_dir.
ExperimentConfig validate_config(const nlohmann::json& raw, const std::filesystem::path& base_dir = {});
/// Problems found in the raw document; empty when it is valid.
std::vector<std::string> config_issues(const nlohmann::json& raw, const std::filesystem::path& base_dir = {});

/// A manifest file carries the resolved config under "config"; plain configs are returned unchanged.
nlohmann::json config_from_document(const nlohmann::json& doc);

/// Problem (spectrum at lambda, drift, E-norm) described by the config.
Problem build_problem(const ExperimentConfig& cfg, double lambda);
OUParams noise_params(const ExperimentConfig& cfg, const Spectrum& s);

struct CalibrationOutcome {
  double lambda = 0.0;
  bool calibrated = false;
  std::optional<CalibrationResult> result;
  nlohmann::json to_json() const;
};
CalibrationOutcome resolve_lambda(const ExperimentConfig& cfg, int threads = 0);

/// Tabular artifact: header plus rows of already formatted cells.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};
std::string format_number(double x);
std::string to_csv(const Table& t);
Table parse_csv(const std::string& text);

struct RunArtifacts {
  nlohmann::json summary;
  nlohmann::json residuals;  // array of residual reports
  Table ou_moments;
  Table trajectories;
  Table monitor;
  Table residual_table;
  Table residual_halving;  // step-halving extrapolation on paired paths
  Table marginals;
  Table tightness;
  Table series;
  Table moment_scan;
  std::vector<std::string> checks_failed;  // trivial-tier checks
};

/// Stage failures are rethrown with the stage name prefixed; the exception type is preserved for
/// ConfigError and NumericalError so callers can map exit codes.
RunArtifacts run_pipeline(const ExperimentConfig& cfg, int threads = 0);

struct ArtifactRecord {
  std::string file;
  std::string sha256;
  std::size_t bytes = 0;
};

/// Writes every artifact into dir and returns their checksums in a fixed order.
std::vector<ArtifactRecord> emit_reports(const RunArtifacts& art, const std::filesystem::path& dir);

struct RunManifest {
  nlohmann::json config;
  std::string code_version;
  nlohmann::json seeds;
  std::vector<ArtifactRecord> artifacts;
  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

/// Pipeline, report emission and manifest.json in cfg.output.
RunManifest run_experiment(const ExperimentConfig& cfg, int threads = 0);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Recomputes artifact checksums in dir; returns the files whose hash differs or that are missing.
std::vector<std::string> verify_manifest(const RunManifest& m, const std::filesystem::path& dir);

std::string code_version();

}  // namespace fpelab
