#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fpelab/drift.hpp"
#include "fpelab/ou_noise.hpp"
#include "fpelab/spectrum.hpp"

namespace fpelab {

enum class SolverMethod { ExponentialEuler, IntegratingFactorRK4 };

struct SolverConfig {
  std::size_t n_v = 1;
  /// Sub-step; 0 means the noise step. Must divide the noise step.
  double dt_solver = 0.0;
  SolverMethod method = SolverMethod::ExponentialEuler;
  bool adaptive = false;
  double tolerance = 1e-6;
  int max_halvings = 12;
  double lambda = 0.0;
  /// A path whose sup-norm exceeds this is treated as blown up.
  double blowup_ceiling = 1e8;
  /// Evaluate <f_n(V+Z), V> at every grid point.
  bool record_diagnostics = true;
};

/// One noise path on its grid: values laid out (J+1) x n_z.
struct PathView {
  std::span<const double> grid;
  std::span<const double> values;
  std::size_t n_z = 0;
  double lambda = 0.0;

  std::span<const double> at(std::size_t j) const { return values.subspan(j * n_z, n_z); }
  static PathView of(const OUPathEnsemble& e, std::size_t m);
};

struct Trajectory {
  std::vector<double> grid;
  std::size_t n_v = 0;
  std::vector<double> V;             // (J+1) x n_v
  std::vector<double> h_norm;        // ||V(t_j)||_H
  std::vector<double> v_norm_sq;     // ||V(t_j)||_V^2
  std::vector<double> f_dot_v;       // <f_n(V+Z, t_j), V>
  std::size_t substeps = 0;

  std::span<const double> at(std::size_t j) const { return {V.data() + j * n_v, n_v}; }
};

/// dV/dt = A_n V + f_n(V + Z, t) + lambda pi_n Z with Z held at the left grid value on every noise interval.
Trajectory integrate_v(std::span<const double> v0, const PathView& path, const DriftModel& model,
                       const Spectrum& s, const SolverConfig& cfg);

/// Constants of the energy inequality
/// d||V||^2/dt - <A_n V, V> <= C ||V||^2 (||Z||_E^2 + 1) + (C + lambda^2) ||Z||_E^k0 + C.
struct EnergyConstants {
  double C = 0.0;
  double lambda = 0.0;
  double k0 = 2.0;
};

struct MarginSeries {
  std::vector<double> margins;  // one per step, right minus left
  double min_margin = 0.0;
  std::size_t violations = 0;   // margins below -tolerance
};

/// Forward-difference left side with left-point right side.
MarginSeries energy_inequality_monitor(const Trajectory& traj, const PathView& path, const ENorm& enorm,
                                       const EnergyConstants& k, double tolerance = 0.0);

/// Smallest C making every step margin of the trajectory non-negative.
double energy_constant_needed(const Trajectory& traj, const PathView& path, const ENorm& enorm, double lambda,
                              double k0);

struct Envelope {
  std::vector<double> values;   // envelope(t_j)
  bool dominated = true;        // ||V(t_j)|| <= envelope(t_j) for all j
  std::size_t first_violation = 0;
};

/// ||V(t)|| <= e^{I(0,t)/2} [||V(0)|| + (int_0^t (C + lambda^2) ||Z||_E^k0 + C)^{1/2}],
/// I(0,t) = Cbar int_0^t (||Z||_E^2 + 1), integrals as left Riemann sums on the grid.
Envelope gronwall_envelope(const Trajectory& traj, const PathView& path, const ENorm& enorm, double c_bar,
                           const EnergyConstants& k);

/// C sup ||V||^4 + (int ||Z||_E^{max(k0,2)})^2 + C - int ||V||_V^2 (trapezoid).
double vnorm_budget_check(const Trajectory& traj, const PathView& path, const ENorm& enorm, double C, double k0);
double vnorm_budget_constant_needed(const Trajectory& traj, const PathView& path, const ENorm& enorm, double k0);

struct MomentRow {
  std::size_t n = 0;
  double p = 0.0;
  double estimate = 0.0;   // mean of sup_t ||V_n(t)||^p over successful paths
  double std_error = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double normalized = 0.0; // estimate^{1/p}
  std::size_t successes = 0;
  std::size_t blowups = 0;
};

struct MomentScan {
  std::vector<MomentRow> rows;
  /// Every pair of rows with equal p has overlapping 95% intervals.
  bool uniform = true;
};

/// Estimates E[sup_t ||V_n(t)||_H^p] for every n in n_list and every p in ps, all driven by the same noise
/// paths. initial(m, out) writes the initial coordinates of path m (out has max(n_list) entries).
MomentScan moment_scan(std::span<const std::size_t> n_list, std::span<const double> ps, const OUPathEnsemble& noise,
                       const DriftModel& model, const Spectrum& s, const SolverConfig& base,
                       const std::function<void(std::size_t, std::span<double>)>& initial, int threads = 0);

nlohmann::json trajectory_diagnostics(const Trajectory& traj);

}  // namespace fpelab
