#include <cmath>
#include <fstream>
#include <sstream>

#include "fpelab/common.hpp"
#include "fpelab/experiment.hpp"

namespace fpelab {

namespace {

using nlohmann::json;

const char* kEpsilon2d =
    "epsilon must be > 0 for d = 2 (noise a_i = alpha_i^(-epsilon) must make sum a_i / alpha_i^2 finite)";
const char* kEpsilon3d =
    "epsilon must be > 1 for d = 3 (noise a_i = alpha_i^(-epsilon) must make sum a_i / alpha_i^2 finite in three "
    "dimensions)";

/// Collects every problem instead of stopping at the first.
class Reader {
 public:
  Reader(const json& doc, std::vector<std::string>& issues) : doc_(doc), issues_(issues) {}

  bool has(const char* key) const { return doc_.is_object() && doc_.contains(key); }

  double number(const char* key, double fallback) {
    if (!has(key)) return fallback;
    const auto& v = doc_.at(key);
    if (!v.is_number()) {
      issues_.push_back(std::string(key) + ": expected a number");
      return fallback;
    }
    const double x = v.get<double>();
    if (!std::isfinite(x)) issues_.push_back(std::string(key) + ": must be finite");
    return x;
  }

  std::size_t count(const char* key, std::size_t fallback) {
    if (!has(key)) return fallback;
    const auto& v = doc_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      issues_.push_back(std::string(key) + ": expected a non-negative integer");
      return fallback;
    }
    return v.get<std::size_t>();
  }

  std::string text(const char* key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const auto& v = doc_.at(key);
    if (!v.is_string()) {
      issues_.push_back(std::string(key) + ": expected a string");
      return fallback;
    }
    return v.get<std::string>();
  }

  std::vector<double> numbers(const char* key) {
    std::vector<double> out;
    if (!has(key)) return out;
    const auto& v = doc_.at(key);
    if (!v.is_array()) {
      issues_.push_back(std::string(key) + ": expected an array of numbers");
      return out;
    }
    for (const auto& e : v) {
      if (!e.is_number()) {
        issues_.push_back(std::string(key) + ": expected an array of numbers");
        return {};
      }
      out.push_back(e.get<double>());
    }
    return out;
  }

  std::vector<std::size_t> counts(const char* key) {
    std::vector<std::size_t> out;
    if (!has(key)) return out;
    const auto& v = doc_.at(key);
    if (!v.is_array()) {
      issues_.push_back(std::string(key) + ": expected an array of positive integers");
      return out;
    }
    for (const auto& e : v) {
      if (!e.is_number_integer() || e.get<long long>() < 1) {
        issues_.push_back(std::string(key) + ": expected an array of positive integers");
        return {};
      }
      out.push_back(e.get<std::size_t>());
    }
    return out;
  }

  const json* section(const char* key) {
    if (!has(key)) return nullptr;
    if (!doc_.at(key).is_object()) {
      issues_.push_back(std::string(key) + ": expected an object");
      return nullptr;
    }
    return &doc_.at(key);
  }

 private:
  const json& doc_;
  std::vector<std::string>& issues_;
};

std::vector<std::vector<double>> read_rows(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot open empirical file " + file.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    for (char& c : line) {
      if (c == ',' || c == ';' || c == '\t') c = ' ';
    }
    std::istringstream ls(line);
    std::vector<double> row;
    double x;
    while (ls >> x) row.push_back(x);
    if (!ls.eof()) throw Error("empirical file " + file.string() + ": non-numeric entry in line '" + line + "'");
    if (!row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

InitialMeasure parse_initial(const json* sec, const std::filesystem::path& base, std::vector<std::string>& issues,
                             std::size_t n_z) {
  if (sec == nullptr) return InitialMeasure::point({0.0});
  Reader r(*sec, issues);
  const std::string kind = r.text("kind", "point");
  const double p1 = r.number("p1", 4.0);
  if (p1 <= 0.0) issues.push_back("initial.p1: declared moment order must be positive");
  auto check_dim = [&](std::size_t n, const char* what) {
    if (n > n_z) issues.push_back(std::string("initial.") + what + ": has more coordinates than n_z");
  };
  if (kind == "point") {
    auto x = r.numbers("x");
    if (x.empty()) x = {0.0};
    check_dim(x.size(), "x");
    auto mu = InitialMeasure::point(std::move(x));
    mu.p1 = sec->contains("p1") ? p1 : std::numeric_limits<double>::infinity();
    return mu;
  }
  if (kind == "gaussian") {
    auto mean = r.numbers("mean");
    auto sd = r.numbers("sd");
    if (mean.empty() || mean.size() != sd.size()) {
      issues.push_back("initial: gaussian mean and sd must be non-empty and of equal length");
      return InitialMeasure::point({0.0});
    }
    for (double s : sd) {
      if (s < 0.0) issues.push_back("initial.sd: standard deviations must be non-negative");
    }
    check_dim(mean.size(), "mean");
    return InitialMeasure::gaussian(std::move(mean), std::move(sd), p1);
  }
  if (kind == "empirical") {
    std::vector<std::vector<double>> rows;
    if (sec->contains("rows")) {
      try {
        rows = sec->at("rows").get<std::vector<std::vector<double>>>();
      } catch (const json::exception&) {
        issues.push_back("initial.rows: expected an array of numeric rows");
      }
    } else if (sec->contains("file")) {
      std::filesystem::path f = r.text("file", "");
      if (f.is_relative() && !base.empty()) f = base / f;
      try {
        rows = read_rows(f);
      } catch (const Error& e) {
        issues.push_back(std::string("initial.file: ") + e.what());
      }
    } else {
      issues.push_back("initial: empirical measure needs 'rows' or 'file'");
    }
    if (rows.empty()) {
      issues.push_back("initial: empirical measure has no samples");
      return InitialMeasure::point({0.0});
    }
    for (const auto& row : rows) check_dim(row.size(), "rows");
    return InitialMeasure::empirical(std::move(rows), p1);
  }
  issues.push_back("initial.kind: expected one of point, gaussian, empirical");
  return InitialMeasure::point({0.0});
}

json initial_to_json(const InitialMeasure& mu) {
  switch (mu.kind) {
    case InitialMeasure::Kind::PointMass: {
      json j = {{"kind", "point"}, {"x", mu.mean}};
      if (std::isfinite(mu.p1)) j["p1"] = mu.p1;
      return j;
    }
    case InitialMeasure::Kind::GaussianProduct:
      return {{"kind", "gaussian"}, {"mean", mu.mean}, {"sd", mu.sd}, {"p1", mu.p1}};
    case InitialMeasure::Kind::Empirical:
      return {{"kind", "empirical"}, {"rows", mu.rows}, {"p1", mu.p1}};
  }
  return {};
}

const char* lift_name(LiftMode m) {
  switch (m) {
    case LiftMode::DiracSecond: return "dirac-second";
    case LiftMode::ProductFirst: return "product-first";
    case LiftMode::Convex: return "convex";
  }
  return "";
}

std::size_t torus_mode_count(int d, double kmax) {
  try {
    return TorusBasis::build(d, kmax).size();
  } catch (const Error&) {
    return 0;
  }
}

bool divides(double big, double small) {
  const double q = big / small;
  return std::abs(q - std::round(q)) <= 1e-9 * std::max(1.0, q);
}

ExperimentConfig parse(const json& raw, const std::filesystem::path& base, std::vector<std::string>& issues) {
  ExperimentConfig c;
  if (!raw.is_object()) {
    issues.push_back("config: expected a JSON object");
    return c;
  }
  Reader r(raw, issues);

  const std::string example = r.text("example", "");
  if (example == "navier-stokes") {
    c.example = ExampleKind::NavierStokes;
  } else if (example == "linear-growth") {
    c.example = ExampleKind::LinearGrowth;
  } else {
    issues.push_back("example: expected 'linear-growth' or 'navier-stokes'");
  }

  c.T = r.number("T", c.T);
  c.dt_noise = r.number("dt_noise", c.dt_noise);
  c.dt_solver = r.number("dt_solver", c.dt_solver);
  c.n_v = r.count("n_v", c.n_v);
  c.n_z = r.count("n_z", c.n_v > c.n_z ? c.n_v : c.n_z);
  c.M = r.count("M", c.M);
  c.seed = r.count("seed", 0);
  const std::string method = r.text("method", "exponential-euler");
  if (method == "exponential-euler") {
    c.method = SolverMethod::ExponentialEuler;
  } else if (method == "if-rk4") {
    c.method = SolverMethod::IntegratingFactorRK4;
  } else {
    issues.push_back("method: expected 'exponential-euler' or 'if-rk4'");
  }
  c.output = r.text("output", c.output);

  if (c.T <= 0.0) issues.push_back("T: time horizon must be positive");
  if (c.dt_noise <= 0.0) {
    issues.push_back("dt_noise: step must be positive");
  } else if (c.T > 0.0 && (c.dt_noise > c.T || !divides(c.T, c.dt_noise))) {
    issues.push_back("dt_noise: must divide T");
  }
  if (c.dt_solver < 0.0) {
    issues.push_back("dt_solver: step must be non-negative (0 means the noise step)");
  } else if (c.dt_solver > 0.0 && c.dt_noise > 0.0 && !divides(c.dt_noise, c.dt_solver)) {
    issues.push_back("dt_solver: must divide dt_noise");
  }
  if (c.n_v < 1) issues.push_back("n_v: at least one Galerkin mode is required");
  if (c.n_z < c.n_v) issues.push_back("n_z: must be >= n_v (the noise has to cover every Galerkin mode)");
  if (c.M < 2) issues.push_back("M: at least two paths are needed for standard errors");

  double p0 = 1.0;
  if (c.example == ExampleKind::NavierStokes) {
    p0 = 2.0;
    const double d = r.number("d", 2.0);
    c.kmax = r.number("kmax", c.kmax);
    c.epsilon = r.number("epsilon", c.epsilon);
    c.nu = r.number("nu", c.nu);
    if (d != 2.0 && d != 3.0) {
      issues.push_back("d: the torus dimension must be 2 or 3");
    } else {
      c.d = static_cast<int>(d);
      if (c.d == 2 && !(c.epsilon > 0.0)) issues.push_back(std::string("epsilon: ") + kEpsilon2d);
      if (c.d == 3 && !(c.epsilon > 1.0)) issues.push_back(std::string("epsilon: ") + kEpsilon3d);
    }
    if (c.nu <= 0.0) issues.push_back("nu: viscosity must be positive");
    if (c.kmax < 1.0) {
      issues.push_back("kmax: must be >= 1");
    } else if (c.d == 2 || c.d == 3) {
      const std::size_t avail = torus_mode_count(c.d, c.kmax);
      if (c.n_z > avail) {
        issues.push_back("n_z: the torus basis with this kmax has only " + std::to_string(avail) + " modes");
      }
    }
  } else {
    c.growth_map = r.text("growth_map", c.growth_map);
    c.growth_constant = r.number("growth_constant", c.growth_constant);
    c.power = r.number("power", c.power);
    c.noise = r.number("noise", c.noise);
    c.noise_decay = r.number("noise_decay", c.noise_decay);
    if (c.growth_map != "tanh" && c.growth_map != "sign") {
      issues.push_back("growth_map: expected 'tanh' or 'sign'");
    }
    if (c.growth_constant < 0.0) {
      issues.push_back("growth_constant: linear growth |f(x)| <= C(1 + |x|) needs C >= 0");
    }
    if (c.power <= 0.0) issues.push_back("power: alpha_i^2 = i^power must be increasing, so power > 0");
    if (c.noise < 0.0) issues.push_back("noise: a_i must be non-negative");
  }

  if (const json* lam = r.section("lambda")) {
    Reader lr(*lam, issues);
    const std::string policy = lr.text("policy", "fixed");
    if (policy == "fixed") {
      c.lambda.calibrate = false;
      c.lambda.value = lr.number("value", 0.0);
      if (c.lambda.value < 0.0) issues.push_back("lambda.value: the shift lambda must be >= 0");
    } else if (policy == "calibrate") {
      c.lambda.calibrate = true;
      c.lambda.K = lr.number("K", c.lambda.K);
      if (lam->contains("grid")) c.lambda.grid = lr.numbers("grid");
      c.lambda.pilot_paths = lr.count("pilot_paths", c.lambda.pilot_paths);
      if (c.lambda.K <= 0.0) issues.push_back("lambda.K: the exponential-moment level K must be positive");
      if (c.lambda.grid.empty()) issues.push_back("lambda.grid: needs at least one candidate");
      for (std::size_t i = 0; i < c.lambda.grid.size(); ++i) {
        if (c.lambda.grid[i] < 0.0 || (i > 0 && c.lambda.grid[i] <= c.lambda.grid[i - 1])) {
          issues.push_back("lambda.grid: candidates must be non-negative and increasing");
          break;
        }
      }
      if (c.lambda.pilot_paths < 2) issues.push_back("lambda.pilot_paths: at least two paths are needed");
    } else {
      issues.push_back("lambda.policy: expected 'fixed' or 'calibrate'");
    }
  }

  c.initial = parse_initial(r.section("initial"), base, issues, c.n_z);

  if (const json* lift = r.section("lift")) {
    Reader lr(*lift, issues);
    const std::string mode = lr.text("mode", "product-first");
    if (mode == "product-first") {
      c.lift.mode = LiftMode::ProductFirst;
    } else if (mode == "dirac-second") {
      c.lift.mode = LiftMode::DiracSecond;
    } else if (mode == "convex") {
      c.lift.mode = LiftMode::Convex;
    } else {
      issues.push_back("lift.mode: expected product-first, dirac-second or convex");
    }
    c.lift.theta = lr.number("theta", c.lift.theta);
    if (c.lift.theta < 0.0 || c.lift.theta > 1.0) {
      issues.push_back("lift.theta: convex combinations need theta in [0, 1]");
    }
  }

  if (const json* suite = r.section("suite")) {
    Reader sr(*suite, issues);
    c.suite_z_scale = sr.number("z_scale", c.suite_z_scale);
    if (c.suite_z_scale <= 0.0) issues.push_back("suite.z_scale: must be positive");
    if (suite->contains("functions")) {
      if (!suite->at("functions").is_array()) {
        issues.push_back("suite.functions: expected an array");
      } else {
        for (const auto& f : suite->at("functions")) {
          try {
            auto u = SplitTestFn::from_json(f);
            if (u.id.empty() || u.id.find_first_of(",\"\n\r") != std::string::npos) {
              issues.push_back("suite.functions: ids must be non-empty without commas, quotes or newlines");
            }
            if (std::abs(u.time.T - c.T) > 1e-12 * std::max(1.0, c.T)) {
              issues.push_back("suite.functions: '" + u.id + "' has horizon " + format_number(u.time.T) +
                               " but T is " + format_number(c.T) + " (test functions must vanish at T)");
            }
            c.suite.push_back(std::move(u));
          } catch (const std::exception& e) {
            issues.push_back(std::string("suite.functions: ") + e.what());
          }
        }
      }
    }
  }

  if (const json* ms = r.section("moment_scan")) {
    Reader mr(*ms, issues);
    c.moments.enabled = true;
    c.moments.p = mr.number("p", c.moments.p);
    c.moments.n_list = mr.counts("n");
    c.moments.paths = mr.count("paths", 0);
    if (c.moments.n_list.empty()) c.moments.n_list = {c.n_v};
    for (std::size_t n : c.moments.n_list) {
      if (n > c.n_z) issues.push_back("moment_scan.n: every n must be <= n_z");
    }
    if (c.moments.paths > c.M) issues.push_back("moment_scan.paths: cannot exceed M");
    const double p1 = c.initial.p1;
    if (!(c.moments.p > p0 && c.moments.p < p1)) {
      issues.push_back("moment_scan.p: moment order must satisfy p0 < p < p1 with p0 = " + format_number(p0) +
                       " (drift growth exponent) and p1 = " + format_number(p1) +
                       " (moment order declared for the initial measure)");
    }
  }

  if (const json* tg = r.section("tightness")) {
    Reader tr(*tg, issues);
    c.tightness_n_list = tr.counts("n");
    c.gamma_theta = tr.number("gamma_theta", c.gamma_theta);
    for (std::size_t n : c.tightness_n_list) {
      if (n > c.n_z) issues.push_back("tightness.n: every n must be <= n_z");
    }
    if (c.gamma_theta < 0.0) {
      issues.push_back("tightness.gamma_theta: weights gamma_i = (alpha_i^2 / alpha_1^2)^theta need theta >= 0");
    }
  }

  static const std::vector<std::string> known = {
      "example", "d", "kmax", "epsilon", "nu", "growth_map", "growth_constant", "power", "noise", "noise_decay",
      "T", "dt_noise", "dt_solver", "n_v", "n_z", "M", "seed", "method", "lambda", "initial", "lift", "suite",
      "moment_scan", "tightness", "output"};
  for (const auto& [key, value] : raw.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) issues.push_back(key + ": unknown key");
  }
  return c;
}

}  // namespace

std::vector<std::string> config_issues(const json& raw, const std::filesystem::path& base_dir) {
  std::vector<std::string> issues;
  parse(raw, base_dir, issues);
  return issues;
}

ExperimentConfig validate_config(const json& raw, const std::filesystem::path& base_dir) {
  std::vector<std::string> issues;
  auto cfg = parse(raw, base_dir, issues);
  if (!issues.empty()) throw ConfigError(std::move(issues));
  return cfg;
}

json config_from_document(const json& doc) {
  if (doc.is_object() && doc.contains("manifest_version") && doc.contains("config")) return doc.at("config");
  return doc;
}

json ExperimentConfig::to_json() const {
  json j;
  j["example"] = example == ExampleKind::NavierStokes ? "navier-stokes" : "linear-growth";
  if (example == ExampleKind::NavierStokes) {
    j["d"] = d;
    j["kmax"] = kmax;
    j["epsilon"] = epsilon;
    j["nu"] = nu;
  } else {
    j["growth_map"] = growth_map;
    j["growth_constant"] = growth_constant;
    j["power"] = power;
    j["noise"] = noise;
    j["noise_decay"] = noise_decay;
  }
  j["T"] = T;
  j["dt_noise"] = dt_noise;
  j["dt_solver"] = dt_solver;
  j["n_v"] = n_v;
  j["n_z"] = n_z;
  j["M"] = M;
  j["seed"] = seed;
  j["method"] = method == SolverMethod::ExponentialEuler ? "exponential-euler" : "if-rk4";
  if (lambda.calibrate) {
    j["lambda"] = {{"policy", "calibrate"}, {"K", lambda.K}, {"grid", lambda.grid}, {"pilot_paths", lambda.pilot_paths}};
  } else {
    j["lambda"] = {{"policy", "fixed"}, {"value", lambda.value}};
  }
  j["initial"] = initial_to_json(initial);
  j["lift"] = {{"mode", lift_name(lift.mode)}, {"theta", lift.theta}};
  json suite_j = {{"z_scale", suite_z_scale}};
  if (!suite.empty()) {
    suite_j["functions"] = json::array();
    for (const auto& u : suite) suite_j["functions"].push_back(u.to_json());
  }
  j["suite"] = suite_j;
  if (moments.enabled) j["moment_scan"] = {{"p", moments.p}, {"n", moments.n_list}, {"paths", moments.paths}};
  j["tightness"] = {{"n", tightness_n_list}, {"gamma_theta", gamma_theta}};
  return j;
}

}  // namespace fpelab
