#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fpelab/common.hpp"
#include "fpelab/experiment.hpp"
#include "fpelab/stats.hpp"

namespace fpelab {

namespace {

using nlohmann::json;

// Stage errors keep their type so exit codes survive the rename.
template <class F>
auto stage(const std::string& name, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const ConfigError&) {
    throw;
  } catch (const BlowupError& e) {
    throw BlowupError(e.time(), name + ": " + e.what());
  } catch (const CalibrationError& e) {
    throw CalibrationError(name + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(name + ": " + e.what());
  } catch (const DimensionError& e) {
    throw DimensionError(name + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(name + ": " + e.what());
  }
}

std::string fmt(std::size_t n) { return std::to_string(n); }

/// Norm series of stored path m, rebuilt in the form the energy monitors expect.
Trajectory trajectory_from_measure(const EmpiricalProductMeasure& mu, std::size_t m, const Problem& prob,
                                   std::vector<double>& zpath) {
  const std::size_t J1 = mu.grid().size(), nv = mu.n_v(), nz = mu.n_z();
  Trajectory tr;
  tr.grid.assign(mu.grid().begin(), mu.grid().end());
  tr.n_v = nv;
  tr.V.resize(J1 * nv);
  zpath.resize(J1 * nz);
  std::vector<double> x(nz), f(nz);
  for (std::size_t j = 0; j < J1; ++j) {
    const auto v = mu.v(m, j);
    const auto z = mu.z(m, j);
    std::copy(v.begin(), v.end(), tr.V.begin() + static_cast<std::ptrdiff_t>(j * nv));
    std::copy(z.begin(), z.end(), zpath.begin() + static_cast<std::ptrdiff_t>(j * nz));
    tr.h_norm.push_back(h_norm(v));
    tr.v_norm_sq.push_back(v_norm_sq(v, prob.spectrum));
    combine_vz(v, z, x);
    prob.drift->eval_f(x, tr.grid[j], f);
    NeumaierSum fv;
    for (std::size_t i = 0; i < nv; ++i) fv.add(f[i] * v[i]);
    tr.f_dot_v.push_back(fv.value());
  }
  return tr;
}

std::vector<std::size_t> check_times(std::size_t J) {
  std::vector<std::size_t> js;
  for (std::size_t k = 0; k <= 4; ++k) {
    const std::size_t j = (J * k) / 4;
    if (js.empty() || js.back() != j) js.push_back(j);
  }
  return js;
}

void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + file.string());
  out << text;
  if (!out) throw Error("write failed for " + file.string());
}

}  // namespace

std::string code_version() {
#ifdef FPELAB_VERSION
  return "fpelab " FPELAB_VERSION;
#else
  return "fpelab unknown";
#endif
}

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

std::string to_csv(const Table& t) {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) {
    require(r.size() == t.header.size(), "to_csv: row width differs from header");
    line(r);
  }
  return out;
}

Table parse_csv(const std::string& text) {
  Table t;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const auto pos = line.find(',', start);
      cells.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size()) throw Error("parse_csv: row width differs from header");
      t.rows.push_back(std::move(cells));
    }
  }
  return t;
}

Problem build_problem(const ExperimentConfig& cfg, double lambda) {
  Problem p;
  if (cfg.example == ExampleKind::NavierStokes) {
    const auto basis = TorusBasis::build(cfg.d, cfg.kmax, cfg.nu);
    p.spectrum = basis.spectrum(cfg.epsilon, lambda, cfg.n_v, cfg.n_z);
    p.drift = std::make_shared<NavierStokesDrift>(basis, cfg.n_z);
    p.enorm = ENorm::torus_sup(basis, cfg.n_z);
    p.basis = basis;
  } else {
    p.spectrum = Spectrum::power_law(cfg.n_z, cfg.power, cfg.noise, cfg.noise_decay, lambda, cfg.n_v, cfg.n_z);
    if (cfg.growth_map == "sign") {
      p.drift = std::make_shared<LinearGrowthDrift>(LinearGrowthDrift::sign(cfg.growth_constant, cfg.n_z));
    } else {
      p.drift = std::make_shared<LinearGrowthDrift>(LinearGrowthDrift::tanh(cfg.growth_constant));
    }
    p.enorm = ENorm::hilbert();
  }
  return p;
}

OUParams noise_params(const ExperimentConfig& cfg, const Spectrum& s) {
  OUParams p;
  p.spectrum = s;
  p.T = cfg.T;
  p.dt = cfg.dt_noise;
  p.seed = cfg.seed;
  p.M = cfg.M;
  return p;
}

json CalibrationOutcome::to_json() const {
  json j = {{"lambda", lambda}, {"calibrated", calibrated}};
  if (result) {
    j["r"] = result->r;
    j["threshold"] = result->threshold;
    j["probability"] = result->probability;
    j["lower_bound"] = result->lower_bound;
    j["trace"] = json::array();
    for (const auto& row : result->trace) {
      j["trace"].push_back({{"lambda", row[0]}, {"probability", row[1]}, {"lower_bound", row[2]}});
    }
  }
  return j;
}

CalibrationOutcome resolve_lambda(const ExperimentConfig& cfg, int threads) {
  CalibrationOutcome out;
  if (!cfg.lambda.calibrate) {
    out.lambda = cfg.lambda.value;
    return out;
  }
  return stage("calibrate", [&] {
    const Problem prob = build_problem(cfg, 0.0);
    OUParams pilot = noise_params(cfg, prob.spectrum);
    pilot.M = cfg.lambda.pilot_paths;
    out.result = calibrate_lambda(cfg.lambda.K, pilot, cfg.lambda.grid, prob.enorm, NoiseEvent::L2NormBelowR, threads);
    out.lambda = out.result->lambda0;
    out.calibrated = true;
    return out;
  });
}

RunArtifacts run_pipeline(const ExperimentConfig& cfg, int threads) {
  RunArtifacts art;
  json& summary = art.summary;
  auto check = [&](const std::string& name, bool ok) {
    summary["checks"][name] = ok;
    if (!ok) art.checks_failed.push_back(name);
  };

  const auto cal = resolve_lambda(cfg, threads);
  const double lambda = cal.lambda;
  summary["lambda"] = cal.to_json();

  const Problem prob = stage("setup", [&] { return build_problem(cfg, lambda); });
  const OUParams noise = noise_params(cfg, prob.spectrum);
  SolverConfig solver;
  solver.n_v = cfg.n_v;
  solver.dt_solver = cfg.dt_solver;
  solver.method = cfg.method;
  solver.lambda = lambda;
  summary["drift"] = prob.drift->name();
  summary["trace_ratio"] = trace_ratio(prob.spectrum, cfg.n_z);

  if (cfg.initial.kind == InitialMeasure::Kind::Empirical) {
    // Declared p1 is trusted; only a sample-moment sanity check here.
    NeumaierSum acc;
    for (const auto& row : cfg.initial.rows) acc.add(std::pow(h_norm(row), cfg.initial.p1));
    const double mom = acc.value() / static_cast<double>(cfg.initial.rows.size());
    summary["initial_sample_moment"] = mom;
    check("initial_sample_moment_finite", std::isfinite(mom));
  }

  // OU diagnostics on the raw noise ensemble.
  const OUPathEnsemble ensemble = stage("ou_noise", [&] { return sample_ensemble(noise, threads); });
  const std::size_t J = noise.steps();
  art.ou_moments.header = {"t", "mode", "mean", "variance", "expected_variance", "skewness", "excess_kurtosis"};
  stage("ou_noise", [&] {
    for (std::size_t k = 1; k <= 5; ++k) {
      const std::size_t j = (J * k) / 5;
      for (const auto& r : ou_moment_table(ensemble, j)) {
        art.ou_moments.rows.push_back({format_number(r.t), fmt(r.mode), format_number(r.mean), format_number(r.variance),
                                       format_number(r.expected_variance), format_number(r.skewness),
                                       format_number(r.excess_kurtosis)});
      }
    }
  });

  const SampleSource source = product_source(prob, noise, solver, cfg.initial, cfg.lift);
  const EmpiricalProductMeasure mu = stage("solver", [&] { return EmpiricalProductMeasure::materialize(source, threads); });
  const SampleSource stored = mu.source();

  // Energy monitors: C fitted on the first half of the recorded paths, checked on all of them.
  stage("monitor", [&] {
    const std::size_t recorded = std::min<std::size_t>(cfg.M, 8);
    const std::size_t pilot = std::max<std::size_t>(1, recorded / 2);
    const double k0 = prob.drift->k0();
    std::vector<Trajectory> trs(recorded);
    std::vector<std::vector<double>> zs(recorded);
    double C = 0.0;
    for (std::size_t m = 0; m < recorded; ++m) {
      trs[m] = trajectory_from_measure(mu, m, prob, zs[m]);
      if (m < pilot) {
        const PathView pv{mu.grid(), zs[m], cfg.n_z, lambda};
        C = std::max(C, energy_constant_needed(trs[m], pv, prob.enorm, lambda, k0));
      }
    }
    const EnergyConstants k{C, lambda, k0};
    art.trajectories.header = {"path", "t", "h_norm", "v_norm_sq", "f_dot_v", "z_enorm"};
    art.monitor.header = {"path", "step", "t", "margin", "envelope", "h_norm"};
    std::size_t violations = 0, undominated = 0;
    for (std::size_t m = 0; m < recorded; ++m) {
      const PathView pv{mu.grid(), zs[m], cfg.n_z, lambda};
      const auto enorms = e_norm_series(zs[m], cfg.n_z, prob.enorm);
      for (std::size_t j = 0; j < trs[m].grid.size(); ++j) {
        art.trajectories.rows.push_back({fmt(m), format_number(trs[m].grid[j]), format_number(trs[m].h_norm[j]),
                                         format_number(trs[m].v_norm_sq[j]), format_number(trs[m].f_dot_v[j]),
                                         format_number(enorms[j])});
      }
      const auto ms = energy_inequality_monitor(trs[m], pv, prob.enorm, k, 1e-9);
      const auto env = gronwall_envelope(trs[m], pv, prob.enorm, C, k);
      violations += m >= pilot ? ms.violations : 0;
      undominated += env.dominated ? 0 : 1;
      for (std::size_t j = 0; j < ms.margins.size(); ++j) {
        art.monitor.rows.push_back({fmt(m), fmt(j), format_number(trs[m].grid[j]), format_number(ms.margins[j]),
                                    format_number(env.values[j]), format_number(trs[m].h_norm[j])});
      }
    }
    summary["monitor"] = {{"paths", recorded},
                          {"pilot_paths", pilot},
                          {"energy_constant", C},
                          {"holdout_violations", violations},
                          {"envelope_failures", undominated}};
  });

  // Residuals.
  std::vector<SplitTestFn> suite = cfg.suite.empty() ? default_test_suite(cfg.T, cfg.suite_z_scale) : cfg.suite;
  std::vector<std::string> skipped;
  std::erase_if(suite, [&](const SplitTestFn& u) {
    const bool drop = u.active_v() > cfg.n_v || u.active_z() > cfg.n_z;
    if (drop) skipped.push_back(u.id);
    return drop;
  });
  summary["suite_skipped"] = skipped;
  stage("residuals", [&] {
    const auto growth = growth_bound_check(*prob.drift, cfg.n_z, 20.0, 2000, cfg.seed ^ 0x6a09e667ULL);
    IntegrabilityGuard guard{growth.constants, prob.drift->p0()};
    for (double& c : guard.growth_constants) c *= 2.0;
    const auto reps = fpe_tilde_residuals(stored, suite, prob, &guard, threads);
    art.residuals = json::array();
    art.residual_table.header = {"test_fn_id", "M", "dt", "residual", "std_error", "bias_estimate", "guard_violations"};
    std::size_t guard_total = 0;
    for (const auto& r : reps) {
      art.residuals.push_back(r.to_json());
      art.residual_table.rows.push_back({r.test_fn_id, fmt(r.M), format_number(r.dt), format_number(r.residual),
                                         format_number(r.std_error), format_number(r.bias_estimate),
                                         fmt(r.guard_violations)});
      guard_total += r.guard_violations;
    }
    summary["guard_violations"] = guard_total;

    art.residual_halving.header = art.residual_table.header;
    if (J % 2 == 0) {
      const auto coarse = product_source(prob, noise, solver, cfg.initial, cfg.lift, 2);
      for (const auto& r : fpe_tilde_residuals_halving(stored, coarse, suite, prob, &guard, threads)) {
        art.residual_halving.rows.push_back({r.test_fn_id, fmt(r.M), format_number(r.dt), format_number(r.residual),
                                             format_number(r.std_error), format_number(r.bias_estimate),
                                             fmt(r.guard_violations)});
      }
    }

    const SplitTestFn nothing = SplitTestFn::product("zero", {TimeFactor::Cosine, cfg.T}, 0.0, {}, {});
    check("zero_function_residual", fpe_tilde_residual(stored, nothing, prob, threads).residual == 0.0);

    // Lifted members of the suite: pushed measure with L against product measure with the lift.
    std::vector<CylindricalTestFn> plain;
    std::vector<SplitTestFn> lifts;
    for (const auto& u : suite) {
      if (u.kind == SplitTestFn::Kind::Lift) {
        plain.push_back(u.lifted());
        lifts.push_back(u);
      }
    }
    if (!plain.empty()) {
      const EmpiricalMeasure pushed = pushforward_sum(mu);
      const auto a = fpe_residuals(pushed.source(), plain, prob, threads);
      const auto b = fpe_tilde_residuals(stored, lifts, prob, nullptr, threads);
      bool same = true;
      for (std::size_t k = 0; k < a.size(); ++k) same = same && a[k].residual == b[k].residual;
      check("pushforward_equivalence", same);

      std::vector<ShiftPoint> pts;
      for (std::size_t m = 0; m < std::min<std::size_t>(cfg.M, 20); ++m) {
        const std::size_t j = (m * 7) % mu.grid().size();
        const auto v = mu.v(m, j), z = mu.z(m, j);
        pts.push_back({{v.begin(), v.end()}, {z.begin(), z.end()}, mu.grid()[j]});
      }
      double worst = 0.0;
      for (const auto& u : plain) worst = std::max(worst, shift_identity_check(u, pts, *prob.drift, prob.spectrum).max_rel);
      summary["shift_identity_max_rel"] = worst;
      check("shift_identity", worst <= 1e-12);
    }
  });

  // Gaussian marginals hold only when the lift leaves z0 = 0.
  art.marginals.header = {"j", "t", "mode", "mean", "variance", "expected_variance", "skewness", "excess_kurtosis",
                          "z_mean", "z_variance", "z_skewness", "z_kurtosis", "pass"};
  if (cfg.lift.mode == LiftMode::ProductFirst) {
    stage("marginals", [&] {
      const auto js = check_times(J);
      const auto rep = marginal_gaussian_check(stored, prob.spectrum, js, 5.0, threads);
      bool zero_start = true;
      for (const auto& r : rep.rows) {
        if (r.j == 0) zero_start = zero_start && r.mean == 0.0 && r.variance == 0.0;
        art.marginals.rows.push_back({fmt(r.j), format_number(r.t), fmt(r.mode), format_number(r.mean),
                                      format_number(r.variance), format_number(r.expected_variance),
                                      format_number(r.skewness), format_number(r.excess_kurtosis),
                                      format_number(r.z_scores[0]), format_number(r.z_scores[1]),
                                      format_number(r.z_scores[2]), format_number(r.z_scores[3]),
                                      r.pass ? "1" : "0"});
      }
      summary["marginals_all_pass"] = rep.all_pass;
      check("marginals_zero_at_start", zero_start);
    });
  } else {
    summary["marginals_all_pass"] = nullptr;
  }

  // Tightness at the run's n_v and across the requested truncations.
  stage("tightness", [&] {
    const auto g = GammaWeights::power_law(prob.spectrum, cfg.gamma_theta);
    art.tightness.header = {"n_v", "v_part", "v_se", "z_part", "z_se", "total", "total_se", "c_gamma", "z_bound"};
    auto row = [&](std::size_t n, const TightnessReport& r) {
      art.tightness.rows.push_back({fmt(n), format_number(r.v_part), format_number(r.v_se), format_number(r.z_part),
                                    format_number(r.z_se), format_number(r.total), format_number(r.total_se),
                                    format_number(r.c_gamma), format_number(r.z_bound)});
    };
    const auto base = tightness_functional(stored, g, prob.spectrum, threads);
    row(cfg.n_v, base);
    for (std::size_t n : cfg.tightness_n_list) {
      if (n == cfg.n_v) continue;
      ExperimentConfig alt = cfg;
      alt.n_v = n;
      const Problem p2 = build_problem(alt, lambda);
      SolverConfig s2 = solver;
      s2.n_v = n;
      const auto src = product_source(p2, noise_params(alt, p2.spectrum), s2, cfg.initial, cfg.lift);
      row(n, tightness_functional(src, g, p2.spectrum, threads));
    }
  });

  // Long-format observable series for every suite member.
  stage("series", [&] {
    art.series.header = {"test_fn_id", "t", "mean", "std_error"};
    for (const auto& u : suite) {
      for (const auto& p : observable_series(stored, u, threads)) {
        art.series.rows.push_back({u.id, format_number(p.t), format_number(p.mean), format_number(p.std_error)});
      }
    }
  });

  art.moment_scan.header = {"n", "p", "estimate", "std_error", "lo", "hi", "normalized", "successes", "blowups"};
  if (cfg.moments.enabled) {
    stage("moment_scan", [&] {
      OUParams mp = noise;
      if (cfg.moments.paths > 0) mp.M = cfg.moments.paths;
      const OUPathEnsemble& ens = mp.M == noise.M ? ensemble : sample_ensemble(mp, threads);
      const std::vector<double> ps{cfg.moments.p};
      // Initial coordinates of path m in product-first form.
      const auto initial = [&](std::size_t m, std::span<double> out) {
        std::vector<double> x(cfg.n_z);
        cfg.initial.sample(cfg.seed, m, x);
        std::copy(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(out.size()), out.begin());
      };
      const auto scan = moment_scan(cfg.moments.n_list, ps, ens, *prob.drift, prob.spectrum, solver, initial, threads);
      for (const auto& r : scan.rows) {
        art.moment_scan.rows.push_back({fmt(r.n), format_number(r.p), format_number(r.estimate),
                                        format_number(r.std_error), format_number(r.lo), format_number(r.hi),
                                        format_number(r.normalized), fmt(r.successes), fmt(r.blowups)});
      }
      summary["moment_scan_uniform"] = scan.uniform;
    });
  }
  return art;
}

std::vector<ArtifactRecord> emit_reports(const RunArtifacts& art, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::pair<std::string, std::string>> files = {
      {"summary.json", art.summary.dump(2) + "\n"},
      {"residuals.json", (art.residuals.is_null() ? json::array() : art.residuals).dump(2) + "\n"},
      {"residuals.csv", to_csv(art.residual_table)},
      {"residuals_halving.csv", to_csv(art.residual_halving)},
      {"ou_moments.csv", to_csv(art.ou_moments)},
      {"trajectories.csv", to_csv(art.trajectories)},
      {"monitor.csv", to_csv(art.monitor)},
      {"marginals.csv", to_csv(art.marginals)},
      {"tightness.csv", to_csv(art.tightness)},
      {"series.csv", to_csv(art.series)},
      {"moment_scan.csv", to_csv(art.moment_scan)},
  };
  std::vector<ArtifactRecord> records;
  for (const auto& [name, text] : files) {
    write_text(dir / name, text);
    records.push_back({name, sha256_hex(text), text.size()});
  }
  return records;
}

json RunManifest::to_json() const {
  json arts = json::array();
  for (const auto& a : artifacts) arts.push_back({{"file", a.file}, {"sha256", a.sha256}, {"bytes", a.bytes}});
  return {{"manifest_version", 1}, {"code_version", code_version}, {"config", config}, {"seeds", seeds},
          {"artifacts", arts}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  m.config = j.at("config");
  m.code_version = j.at("code_version").get<std::string>();
  m.seeds = j.at("seeds");
  for (const auto& a : j.at("artifacts")) {
    m.artifacts.push_back({a.at("file").get<std::string>(), a.at("sha256").get<std::string>(),
                           a.at("bytes").get<std::size_t>()});
  }
  return m;
}

RunManifest run_experiment(const ExperimentConfig& cfg, int threads) {
  const RunArtifacts art = run_pipeline(cfg, threads);
  RunManifest m;
  m.config = cfg.to_json();
  m.code_version = code_version();
  m.seeds = {{"noise", cfg.seed}, {"initial", cfg.seed}, {"lift", cfg.seed},
             {"growth_audit", cfg.seed ^ 0x6a09e667ULL}};
  m.artifacts = stage("emit", [&] { return emit_reports(art, cfg.output); });
  write_text(std::filesystem::path(cfg.output) / "manifest.json", m.to_json().dump(2) + "\n");
  if (!art.checks_failed.empty()) {
    std::string names;
    for (const auto& c : art.checks_failed) names += (names.empty() ? "" : ", ") + c;
    throw NumericalError("checks failed: " + names);
  }
  return m;
}

std::vector<std::string> verify_manifest(const RunManifest& m, const std::filesystem::path& dir) {
  std::vector<std::string> bad;
  for (const auto& a : m.artifacts) {
    const auto file = dir / a.file;
    if (!std::filesystem::exists(file) || sha256_file(file) != a.sha256) bad.push_back(a.file);
  }
  return bad;
}

}  // namespace fpelab
