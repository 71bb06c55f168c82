#include "fpelab/galerkin.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fpelab/common.hpp"
#include "fpelab/stats.hpp"

namespace fpelab {

PathView PathView::of(const OUPathEnsemble& e, std::size_t m) {
  return PathView{e.grid(), e.path(m), e.modes(), e.params().spectrum.lambda};
}

namespace {

double phi1(double z) {
  if (z == 0.0) return 1.0;
  return std::expm1(z) / z;
}

/// One solver instance per path: holds scratch space and the frozen data.
class Stepper {
 public:
  Stepper(const DriftModel& model, const Spectrum& s, const SolverConfig& cfg, std::size_t n_z)
      : model_(model), s_(s), cfg_(cfg), n_z_(n_z), x_(n_z), f_(cfg.n_v), tmp_(cfg.n_v), half_(cfg.n_v),
        k1_(cfg.n_v), k2_(cfg.n_v), k3_(cfg.n_v), k4_(cfg.n_v), u_(cfg.n_v) {}

  /// g = f_n(V + Z, t) + lambda pi_n Z.
  void forcing(std::span<const double> V, std::span<const double> Z, double t, std::span<double> g) {
    std::copy(Z.begin(), Z.end(), x_.begin());
    for (std::size_t i = 0; i < V.size(); ++i) x_[i] += V[i];
    model_.eval_f(x_, t, g);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += cfg_.lambda * Z[i];
  }

  void step(std::span<double> V, std::span<const double> Z, double t, double h) {
    const std::size_t n = V.size();
    if (cfg_.method == SolverMethod::ExponentialEuler) {
      forcing(V, Z, t, f_);
      for (std::size_t i = 0; i < n; ++i) {
        const double z = -s_.alphas_sq[i] * h;
        V[i] = std::exp(z) * V[i] + h * phi1(z) * f_[i];
      }
      return;
    }
    // Integrating factor U(s) = e^{D s} V(s), classical RK4 on U.
    auto stage = [&](double sub, std::span<const double> U, std::span<double> out) {
      for (std::size_t i = 0; i < n; ++i) u_[i] = std::exp(-s_.alphas_sq[i] * sub) * U[i];
      forcing(u_, Z, t + sub, out);
      for (std::size_t i = 0; i < n; ++i) out[i] *= std::exp(s_.alphas_sq[i] * sub);
    };
    std::copy(V.begin(), V.end(), tmp_.begin());
    stage(0.0, tmp_, k1_);
    for (std::size_t i = 0; i < n; ++i) half_[i] = V[i] + 0.5 * h * k1_[i];
    stage(0.5 * h, half_, k2_);
    for (std::size_t i = 0; i < n; ++i) half_[i] = V[i] + 0.5 * h * k2_[i];
    stage(0.5 * h, half_, k3_);
    for (std::size_t i = 0; i < n; ++i) half_[i] = V[i] + h * k3_[i];
    stage(h, half_, k4_);
    for (std::size_t i = 0; i < n; ++i) {
      const double U = V[i] + h / 6.0 * (k1_[i] + 2.0 * k2_[i] + 2.0 * k3_[i] + k4_[i]);
      V[i] = std::exp(-s_.alphas_sq[i] * h) * U;
    }
  }

  /// Step doubling: accept two half steps when they agree with one full step.
  std::size_t advance(std::span<double> V, std::span<const double> Z, double t, double h, int depth) {
    if (!cfg_.adaptive) {
      step(V, Z, t, h);
      return 1;
    }
    std::vector<double> full(V.begin(), V.end());
    std::vector<double> two(V.begin(), V.end());
    step(full, Z, t, h);
    step(two, Z, t, 0.5 * h);
    step(two, Z, t + 0.5 * h, 0.5 * h);
    double err = 0.0, scale = 1.0;
    for (std::size_t i = 0; i < V.size(); ++i) {
      err = std::max(err, std::abs(full[i] - two[i]));
      scale = std::max(scale, std::abs(two[i]));
    }
    if (!(err / scale > cfg_.tolerance) || depth >= cfg_.max_halvings) {
      std::copy(two.begin(), two.end(), V.begin());
      return 3;
    }
    std::size_t count = advance(V, Z, t, 0.5 * h, depth + 1);
    count += advance(V, Z, t + 0.5 * h, 0.5 * h, depth + 1);
    return count;
  }

 private:
  const DriftModel& model_;
  const Spectrum& s_;
  const SolverConfig& cfg_;
  std::size_t n_z_;
  std::vector<double> x_, f_, tmp_, half_, k1_, k2_, k3_, k4_, u_;
};

void check_finite(std::span<const double> V, double t, double ceiling) {
  for (double v : V) {
    if (!std::isfinite(v)) throw BlowupError(t, "numerical blow-up: non-finite state");
    if (std::abs(v) > ceiling) throw BlowupError(t, "numerical blow-up: state exceeds ceiling");
  }
}

}  // namespace

Trajectory integrate_v(std::span<const double> v0, const PathView& path, const DriftModel& model,
                       const Spectrum& s, const SolverConfig& cfg) {
  const std::size_t n = cfg.n_v;
  require(n >= 1, "integrate_v: n_v must be >= 1");
  require(v0.size() >= n, "integrate_v: initial value has fewer than n_v coordinates");
  require(path.n_z >= n, "integrate_v: noise has fewer modes than n_v");
  require(path.n_z <= s.size(), "integrate_v: noise modes exceed the spectrum");
  require(path.n_z <= model.max_modes(), "integrate_v: noise modes exceed the drift model");
  require(path.grid.size() >= 2, "integrate_v: grid needs at least two points");
  require_same_size(path.values.size(), path.grid.size() * path.n_z, "integrate_v path");
  const double lam_scale = std::max(1.0, std::abs(cfg.lambda));
  if (std::abs(path.lambda - cfg.lambda) > 1e-12 * lam_scale || std::abs(s.lambda - cfg.lambda) > 1e-12 * lam_scale) {
    throw Error("integrate_v: lambda mismatch between solver config, spectrum and noise path");
  }

  const std::size_t J = path.grid.size() - 1;
  Trajectory tr;
  tr.grid.assign(path.grid.begin(), path.grid.end());
  tr.n_v = n;
  tr.V.assign((J + 1) * n, 0.0);
  tr.h_norm.resize(J + 1);
  tr.v_norm_sq.resize(J + 1);
  tr.f_dot_v.resize(J + 1);
  std::copy(v0.begin(), v0.begin() + static_cast<std::ptrdiff_t>(n), tr.V.begin());

  Stepper stepper(model, s, cfg, path.n_z);
  std::vector<double> V(tr.V.begin(), tr.V.begin() + static_cast<std::ptrdiff_t>(n));
  std::vector<double> f(n), x(path.n_z);

  auto record = [&](std::size_t j) {
    tr.h_norm[j] = h_norm(V);
    tr.v_norm_sq[j] = v_norm_sq(V, s);
    if (!cfg.record_diagnostics) return;
    const auto Z = path.at(j);
    std::copy(Z.begin(), Z.end(), x.begin());
    for (std::size_t i = 0; i < n; ++i) x[i] += V[i];
    model.eval_f(x, tr.grid[j], f);
    NeumaierSum fv;
    for (std::size_t i = 0; i < n; ++i) fv.add(f[i] * V[i]);
    tr.f_dot_v[j] = fv.value();
  };

  check_finite(V, tr.grid[0], cfg.blowup_ceiling);
  record(0);
  for (std::size_t j = 0; j < J; ++j) {
    const double t0 = tr.grid[j];
    const double H = tr.grid[j + 1] - t0;
    std::size_t sub = 1;
    if (cfg.dt_solver > 0.0) {
      const double ratio = H / cfg.dt_solver;
      sub = static_cast<std::size_t>(std::llround(ratio));
      if (sub == 0 || std::abs(static_cast<double>(sub) * cfg.dt_solver - H) > 1e-9 * H) {
        throw Error("integrate_v: solver step must be an integer refinement of the noise step");
      }
    }
    const double h = H / static_cast<double>(sub);
    const auto Z = path.at(j);
    for (std::size_t k = 0; k < sub; ++k) {
      const double t = t0 + static_cast<double>(k) * h;
      tr.substeps += stepper.advance(V, Z, t, h, 0);
      check_finite(V, t + h, cfg.blowup_ceiling);
    }
    std::copy(V.begin(), V.end(), tr.V.begin() + static_cast<std::ptrdiff_t>((j + 1) * n));
    record(j + 1);
  }
  return tr;
}

// ---------------------------------------------------------------------------
// Monitors

namespace {

std::vector<double> path_enorms(const PathView& path, const ENorm& enorm) {
  std::vector<double> q(path.grid.size());
  for (std::size_t j = 0; j < q.size(); ++j) q[j] = enorm(path.at(j));
  return q;
}

void check_traj_path(const Trajectory& traj, const PathView& path) {
  require_same_size(traj.grid.size(), path.grid.size(), "trajectory and noise grid");
}

}  // namespace

MarginSeries energy_inequality_monitor(const Trajectory& traj, const PathView& path, const ENorm& enorm,
                                       const EnergyConstants& k, double tolerance) {
  check_traj_path(traj, path);
  const auto q = path_enorms(path, enorm);
  MarginSeries out;
  out.min_margin = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j + 1 < traj.grid.size(); ++j) {
    const double h = traj.grid[j + 1] - traj.grid[j];
    const double y0 = traj.h_norm[j] * traj.h_norm[j];
    const double y1 = traj.h_norm[j + 1] * traj.h_norm[j + 1];
    const double lhs = (y1 - y0) / h + traj.v_norm_sq[j];
    const double qk = std::pow(q[j], k.k0);
    const double rhs = k.C * y0 * (q[j] * q[j] + 1.0) + (k.C + k.lambda * k.lambda) * qk + k.C;
    const double margin = rhs - lhs;
    out.margins.push_back(margin);
    out.min_margin = std::min(out.min_margin, margin);
    if (margin < -tolerance) ++out.violations;
  }
  if (out.margins.empty()) out.min_margin = 0.0;
  return out;
}

double energy_constant_needed(const Trajectory& traj, const PathView& path, const ENorm& enorm, double lambda,
                              double k0) {
  check_traj_path(traj, path);
  const auto q = path_enorms(path, enorm);
  double needed = 0.0;
  for (std::size_t j = 0; j + 1 < traj.grid.size(); ++j) {
    const double h = traj.grid[j + 1] - traj.grid[j];
    const double y0 = traj.h_norm[j] * traj.h_norm[j];
    const double y1 = traj.h_norm[j + 1] * traj.h_norm[j + 1];
    const double lhs = (y1 - y0) / h + traj.v_norm_sq[j];
    const double qk = std::pow(q[j], k0);
    const double weight = y0 * (q[j] * q[j] + 1.0) + qk + 1.0;
    needed = std::max(needed, (lhs - lambda * lambda * qk) / weight);
  }
  return needed;
}

Envelope gronwall_envelope(const Trajectory& traj, const PathView& path, const ENorm& enorm, double c_bar,
                           const EnergyConstants& k) {
  check_traj_path(traj, path);
  const auto q = path_enorms(path, enorm);
  Envelope env;
  env.values.resize(traj.grid.size());
  const double v0 = traj.h_norm[0];
  NeumaierSum I, G;
  for (std::size_t j = 0; j < traj.grid.size(); ++j) {
    if (j > 0) {
      const double h = traj.grid[j] - traj.grid[j - 1];
      I.add(h * c_bar * (q[j - 1] * q[j - 1] + 1.0));
      G.add(h * ((k.C + k.lambda * k.lambda) * std::pow(q[j - 1], k.k0) + k.C));
    }
    env.values[j] = std::exp(0.5 * I.value()) * (v0 + std::sqrt(G.value()));
    if (env.dominated && !(traj.h_norm[j] <= env.values[j] * (1.0 + 1e-12))) {
      env.dominated = false;
      env.first_violation = j;
    }
  }
  return env;
}

namespace {

struct BudgetParts {
  double v_integral = 0.0;
  double sup4 = 0.0;
  double z_integral = 0.0;
};

BudgetParts budget_parts(const Trajectory& traj, const PathView& path, const ENorm& enorm, double k0) {
  check_traj_path(traj, path);
  const auto q = path_enorms(path, enorm);
  const double power = std::max(k0, 2.0);
  BudgetParts b;
  NeumaierSum vi, zi;
  for (std::size_t j = 0; j + 1 < traj.grid.size(); ++j) {
    const double h = traj.grid[j + 1] - traj.grid[j];
    vi.add(0.5 * h * (traj.v_norm_sq[j] + traj.v_norm_sq[j + 1]));
    zi.add(0.5 * h * (std::pow(q[j], power) + std::pow(q[j + 1], power)));
  }
  double sup = 0.0;
  for (double v : traj.h_norm) sup = std::max(sup, v);
  b.v_integral = vi.value();
  b.z_integral = zi.value();
  b.sup4 = std::pow(sup, 4.0);
  return b;
}

}  // namespace

double vnorm_budget_check(const Trajectory& traj, const PathView& path, const ENorm& enorm, double C, double k0) {
  const auto b = budget_parts(traj, path, enorm, k0);
  return C * b.sup4 + b.z_integral * b.z_integral + C - b.v_integral;
}

double vnorm_budget_constant_needed(const Trajectory& traj, const PathView& path, const ENorm& enorm, double k0) {
  const auto b = budget_parts(traj, path, enorm, k0);
  return std::max(0.0, (b.v_integral - b.z_integral * b.z_integral) / (b.sup4 + 1.0));
}

// ---------------------------------------------------------------------------
// Moment scan

MomentScan moment_scan(std::span<const std::size_t> n_list, std::span<const double> ps, const OUPathEnsemble& noise,
                       const DriftModel& model, const Spectrum& s, const SolverConfig& base,
                       const std::function<void(std::size_t, std::span<double>)>& initial, int threads) {
  require(!n_list.empty() && !ps.empty(), "moment_scan: empty n or p list");
  const std::size_t n_max = *std::max_element(n_list.begin(), n_list.end());
  require(n_max <= noise.modes(), "moment_scan: n exceeds the noise modes");
  const std::size_t M = noise.paths();
  const std::size_t N = n_list.size();
  // sups[m*N + k]; NaN marks a blown-up path.
  std::vector<double> sups(M * N, std::numeric_limits<double>::quiet_NaN());
  parallel_for(M, threads, [&](std::size_t m) {
    std::vector<double> v0(n_max, 0.0);
    initial(m, v0);
    const PathView path = PathView::of(noise, m);
    for (std::size_t k = 0; k < N; ++k) {
      SolverConfig cfg = base;
      cfg.n_v = n_list[k];
      try {
        const auto tr = integrate_v(v0, path, model, s, cfg);
        sups[m * N + k] = *std::max_element(tr.h_norm.begin(), tr.h_norm.end());
      } catch (const BlowupError&) {
        // counted below
      }
    }
  });

  MomentScan scan;
  for (double p : ps) {
    for (std::size_t k = 0; k < N; ++k) {
      MomentRow row;
      row.n = n_list[k];
      row.p = p;
      std::vector<double> vals;
      for (std::size_t m = 0; m < M; ++m) {
        const double v = sups[m * N + k];
        if (std::isnan(v)) {
          ++row.blowups;
        } else {
          vals.push_back(std::pow(v, p));
        }
      }
      row.successes = vals.size();
      if (!vals.empty()) {
        const auto est = stats::mean_with_error(vals);
        row.estimate = est.mean;
        row.std_error = est.std_error;
        row.lo = est.lo();
        row.hi = est.hi();
        row.normalized = std::pow(est.mean, 1.0 / p);
      }
      scan.rows.push_back(row);
    }
  }
  for (std::size_t a = 0; a < scan.rows.size(); ++a) {
    for (std::size_t b = a + 1; b < scan.rows.size(); ++b) {
      if (scan.rows[a].p != scan.rows[b].p) continue;
      if (!stats::overlaps(scan.rows[a].lo, scan.rows[a].hi, scan.rows[b].lo, scan.rows[b].hi)) scan.uniform = false;
    }
  }
  return scan;
}

nlohmann::json trajectory_diagnostics(const Trajectory& traj) {
  return nlohmann::json{{"grid", traj.grid},         {"n_v", traj.n_v},
                        {"h_norm", traj.h_norm},     {"v_norm_sq", traj.v_norm_sq},
                        {"f_dot_v", traj.f_dot_v},   {"substeps", traj.substeps}};
}

}  // namespace fpelab
