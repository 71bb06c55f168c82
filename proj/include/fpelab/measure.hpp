#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpelab/drift.hpp"
#include "fpelab/galerkin.hpp"
#include "fpelab/ou_noise.hpp"
#include "fpelab/spectrum.hpp"

namespace fpelab {

// ---------------------------------------------------------------------------
// Test functions

enum class KernelFamily { GaussBell, Trig };

/// One-dimensional smooth factor: exp(-(x-c)^2/(2 w^2)) or cos(omega x + theta).
struct Kernel1D {
  KernelFamily family = KernelFamily::GaussBell;
  double p = 0.0;  // center or frequency
  double q = 1.0;  // width or phase

  static Kernel1D bell(double center, double width);
  static Kernel1D trig(double frequency, double phase);

  double value(double x) const;
  /// Value, first and second derivative.
  void eval(double x, double& g0, double& g1, double& g2) const;
  /// sup |d^order K / dx^order|.
  double bound(int order) const;

  nlohmann::json to_json() const;
  static Kernel1D from_json(const nlohmann::json& j);
};

enum class TimeFactor { Cosine, Quadratic };

/// phi(t) = cos(pi t / (2T)) or (1 - t/T)^2; phi(T) = 0.
struct TimeProfile {
  TimeFactor kind = TimeFactor::Cosine;
  double T = 1.0;

  double value(double t) const;
  double derivative(double t) const;
  nlohmann::json to_json() const;
  static TimeProfile from_json(const nlohmann::json& j);
};

/// u(x,t) = phi(t) * scale * prod_{i<N} K_i(x_i). N = 0 gives a function of t only.
struct CylindricalTestFn {
  std::string id;
  TimeProfile time;
  double scale = 1.0;
  std::vector<Kernel1D> kernels;

  std::size_t active() const noexcept { return kernels.size(); }
  double spatial(std::span<const double> x) const;
  double value(std::span<const double> x, double t) const { return time.value(t) * spatial(x); }
  /// P = scale * prod K_i(x_i), its gradient and the diagonal of its Hessian (length N each).
  void spatial_derivatives(std::span<const double> x, double& P, std::span<double> grad,
                           std::span<double> hess) const;

  nlohmann::json to_json() const;
  static CylindricalTestFn from_json(const nlohmann::json& j);
};

/// Test function on the product space, either a product of a v-part and a
/// z-part or the lift u(v+z, t) of a function on H.
struct SplitTestFn {
  enum class Kind { Product, Lift };

  Kind kind = Kind::Product;
  std::string id;
  TimeProfile time;
  double scale = 1.0;
  std::vector<Kernel1D> v_kernels;  // Product: factors in v; Lift: factors in x = v + z
  std::vector<Kernel1D> z_kernels;  // Product only

  static SplitTestFn lift(const CylindricalTestFn& u);
  static SplitTestFn product(std::string id, TimeProfile time, double scale, std::vector<Kernel1D> v_kernels,
                             std::vector<Kernel1D> z_kernels);

  /// The function on H that a Lift wraps.
  CylindricalTestFn lifted() const;
  std::size_t active_v() const noexcept { return v_kernels.size(); }
  std::size_t active_z() const noexcept { return kind == Kind::Lift ? v_kernels.size() : z_kernels.size(); }
  double spatial(std::span<const double> v, std::span<const double> z) const;
  double value(std::span<const double> v, std::span<const double> z, double t) const {
    return time.value(t) * spatial(v, z);
  }

  nlohmann::json to_json() const;
  static SplitTestFn from_json(const nlohmann::json& j);
};

/// x_i = v_i + z_i for i < |v|, x_i = z_i beyond. Every route from (v, z) to x goes through here.
void combine_vz(std::span<const double> v, std::span<const double> z, std::span<double> x);
std::vector<double> combine_vz(std::span<const double> v, std::span<const double> z);

// ---------------------------------------------------------------------------
// Kolmogorov operators

/// (Lu)(x,t) = d_t u + sum_i 1/2 a^i d_i^2 u + sum_i (-alpha_i^2 x_i + f^i(x,t)) d_i u.
double apply_L(const CylindricalTestFn& u, std::span<const double> x, double t, const DriftModel& model,
               const Spectrum& s);
/// Same with f^i(x,t), i < N, supplied by the caller.
double apply_L_with_f(const CylindricalTestFn& u, std::span<const double> x, double t,
                      std::span<const double> f, const Spectrum& s);

/// Auxiliary operator on the product space:
/// d_t u + sum_i (1/2 a^i d_{z_i}^2 - (alpha_i^2+lambda) z_i d_{z_i}) u
///       + sum_i (-alpha_i^2 v_i + f^i(v+z,t) + lambda z_i) d_{v_i} u.
/// Lifts are evaluated in the reduced form (Lu)(v+z, t).
double apply_Ltilde(const SplitTestFn& u, std::span<const double> v, std::span<const double> z, double t,
                    const DriftModel& model, const Spectrum& s);
double apply_Ltilde_with_f(const SplitTestFn& u, std::span<const double> v, std::span<const double> z, double t,
                           std::span<const double> f, const Spectrum& s);
/// Lift evaluated term by term in the (v, z) variables, without using the shift identity.
double apply_Ltilde_expanded(const SplitTestFn& u, std::span<const double> v, std::span<const double> z, double t,
                             const DriftModel& model, const Spectrum& s);

struct ShiftPoint {
  std::vector<double> v;
  std::vector<double> z;
  double t = 0.0;
};

struct ShiftCheck {
  std::size_t points = 0;
  double max_abs = 0.0;
  /// max |Lu(v+z) - Ltilde u~(v,z)| / (1 + |Lu(v+z)|).
  double max_rel = 0.0;
};

ShiftCheck shift_identity_check(const CylindricalTestFn& u, std::span<const ShiftPoint> points,
                                const DriftModel& model, const Spectrum& s);

// ---------------------------------------------------------------------------
// Initial measures and lifts

struct InitialMeasure {
  enum class Kind { PointMass, GaussianProduct, Empirical };
  Kind kind = Kind::PointMass;
  std::vector<double> mean;               // point / Gaussian mean
  std::vector<double> sd;                 // Gaussian standard deviations
  std::vector<std::vector<double>> rows;  // empirical samples
  double p1 = 4.0;                        // declared moment order

  static InitialMeasure point(std::vector<double> x);
  static InitialMeasure gaussian(std::vector<double> mean, std::vector<double> sd, double p1);
  static InitialMeasure empirical(std::vector<std::vector<double>> rows, double p1);

  /// Writes sample m into out (coordinates beyond the measure's support are 0).
  void sample(std::uint64_t seed, std::size_t m, std::span<double> out) const;
  nlohmann::json to_json() const;
};

enum class LiftMode { DiracSecond, ProductFirst, Convex };

/// Convex: with probability theta the sample is lifted as (0, x), otherwise as (x, 0).
struct LiftSpec {
  LiftMode mode = LiftMode::ProductFirst;
  double theta = 0.5;
};

/// Sample m of the lifted initial measure; v = pi_{n_v} x or 0, z = x or 0.
void lift_initial(const InitialMeasure& mu0, const LiftSpec& lift, std::uint64_t seed, std::size_t m,
                  std::span<double> v, std::span<double> z);

// ---------------------------------------------------------------------------
// Empirical measures

/// Sample paths produced on demand. A product source yields rows (v, z) of
/// width n_v + n_z at every grid time; a pushed source yields x of width n_z.
struct SampleSource {
  std::vector<double> grid;
  std::size_t paths = 0;
  std::size_t n_v = 0;
  std::size_t n_z = 0;
  bool product = true;
  std::function<void(std::size_t, std::span<double>)> fill;
  nlohmann::json provenance;

  std::size_t width() const noexcept { return product ? n_v + n_z : n_z; }
  std::size_t path_size() const noexcept { return grid.size() * width(); }
};

/// Joint samples of (V_n(t_j), Z_{t_j}) with uniform weights.
class EmpiricalProductMeasure {
 public:
  EmpiricalProductMeasure(std::vector<double> grid, std::size_t n_v, std::size_t n_z, std::vector<double> samples,
                          nlohmann::json provenance = {});
  static EmpiricalProductMeasure materialize(const SampleSource& src, int threads = 0);

  std::span<const double> grid() const noexcept { return grid_; }
  std::size_t paths() const noexcept { return M_; }
  std::size_t n_v() const noexcept { return n_v_; }
  std::size_t n_z() const noexcept { return n_z_; }
  std::span<const double> samples() const noexcept { return samples_; }
  std::span<const double> v(std::size_t m, std::size_t j) const;
  std::span<const double> z(std::size_t m, std::size_t j) const;
  const nlohmann::json& provenance() const noexcept { return provenance_; }
  /// A source reading from this measure; the measure must outlive it.
  SampleSource source() const;

 private:
  std::vector<double> grid_;
  std::size_t n_v_, n_z_, M_;
  std::vector<double> samples_;
  nlohmann::json provenance_;
};

/// Empirical measure on H: x = v + z (first n_v coordinates), z tail retained.
class EmpiricalMeasure {
 public:
  EmpiricalMeasure(std::vector<double> grid, std::size_t n_x, std::size_t head, std::vector<double> samples);

  std::span<const double> grid() const noexcept { return grid_; }
  std::size_t paths() const noexcept { return M_; }
  std::size_t n_x() const noexcept { return n_x_; }
  /// Number of coordinates carrying v + z; the rest is the z tail.
  std::size_t head() const noexcept { return head_; }
  std::span<const double> x(std::size_t m, std::size_t j) const;
  SampleSource source() const;

 private:
  std::vector<double> grid_;
  std::size_t n_x_, head_, M_;
  std::vector<double> samples_;
};

EmpiricalMeasure pushforward_sum(const EmpiricalProductMeasure& mu);
/// Streaming pushforward of a product source.
SampleSource pushforward_sum(const SampleSource& product);

/// Product source driven by the noise ensemble and the Galerkin solver: path m
/// lifts sample m of mu0, samples OU path m (adding e^{-(alpha^2+lambda)t} z0
/// when the lift puts mass in z) and integrates V. With stride > 1 the same Z paths are read at every
/// stride-th grid point and V is integrated on that coarser grid.
SampleSource product_source(const Problem& problem, const OUParams& noise, const SolverConfig& cfg,
                            const InitialMeasure& mu0, const LiftSpec& lift, std::size_t stride = 1);

// ---------------------------------------------------------------------------
// Residuals and diagnostics

/// |f^i(x)| <= C_i (1 + ||x||^p0), used to bound every operator evaluation.
struct IntegrabilityGuard {
  std::vector<double> growth_constants;
  double p0 = 1.0;
};

struct ResidualReport {
  std::string test_fn_id;
  std::size_t M = 0;
  double dt = 0.0;
  double residual = 0.0;
  double std_error = 0.0;
  /// (fine - coarse)/3 from the same samples on every other grid point; NaN if J is odd.
  double bias_estimate = 0.0;
  std::size_t guard_violations = 0;

  nlohmann::json to_json() const;
  static ResidualReport from_json(const nlohmann::json& j);
};

/// int_0^T E[(Ltilde u~)(X_t, t)] dt + E[u~(X_0, 0)] per test function, trapezoid in time.
std::vector<ResidualReport> fpe_tilde_residuals(const SampleSource& mu, std::span<const SplitTestFn> suite,
                                                const Problem& problem, const IntegrabilityGuard* guard = nullptr,
                                                int threads = 0);
ResidualReport fpe_tilde_residual(const SampleSource& mu, const SplitTestFn& u, const Problem& problem,
                                  int threads = 0);
/// Step-halving extrapolation 2 R(dt) - R(2 dt) on paired paths; coarse is the stride-2 version of fine.
/// bias_estimate holds R(dt) - R(2 dt), the first-order discretization bias of the plain estimate.
std::vector<ResidualReport> fpe_tilde_residuals_halving(const SampleSource& fine, const SampleSource& coarse,
                                                        std::span<const SplitTestFn> suite, const Problem& problem,
                                                        const IntegrabilityGuard* guard = nullptr, int threads = 0);

/// Same for the pushed measure and L.
std::vector<ResidualReport> fpe_residuals(const SampleSource& mu, std::span<const CylindricalTestFn> suite,
                                          const Problem& problem, int threads = 0);
ResidualReport fpe_residual(const SampleSource& mu, const CylindricalTestFn& u, const Problem& problem,
                            int threads = 0);

/// Expected value of the trapezoid residual estimator for f = 0, a test function depending on z only and
/// Gaussian kernels, computed from the exact OU marginals.
double ou_residual_oracle(const SplitTestFn& u, const Spectrum& s, std::span<const double> grid);

struct MarginalRow {
  std::size_t j = 0;
  double t = 0.0;
  std::size_t mode = 0;
  double mean = 0.0;
  double variance = 0.0;
  double expected_variance = 0.0;
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
  /// Deviations in standard errors: mean, variance, skewness, kurtosis.
  std::array<double, 4> z_scores{};
  bool pass = true;
};

struct MarginalReport {
  std::vector<MarginalRow> rows;
  bool all_pass = true;
};

/// z-block moments against N(0, mode_variance(i, t_j)) with 5-standard-error bands.
MarginalReport marginal_gaussian_check(const SampleSource& mu, const Spectrum& s, std::span<const std::size_t> js,
                                       double bands = 5.0, int threads = 0);

struct TightnessReport {
  double v_part = 0.0, v_se = 0.0;
  double z_part = 0.0, z_se = 0.0;
  double total = 0.0, total_se = 0.0;
  double c_gamma = 0.0;
  double z_bound = 0.0;  // T * C_gamma
};

/// E int_0^T (||v||_V^2 + ||Gamma z||_H^2) dt with ||Gamma z||^2 = sum gamma_i z_i^2.
TightnessReport tightness_functional(const SampleSource& mu, const GammaWeights& g, const Spectrum& s,
                                     int threads = 0);

struct SeriesPoint {
  double t = 0.0;
  double mean = 0.0;
  double std_error = 0.0;
};

/// t -> mu_t(phi) for the spatial part of phi.
std::vector<SeriesPoint> observable_series(const SampleSource& mu, const SplitTestFn& phi, int threads = 0);

struct ModulusRow {
  double delta = 0.0;
  double modulus = 0.0;
};

/// max over measures and functions of |mu_t(phi) - mu_s(phi)| for |t - s| <= delta.
std::vector<ModulusRow> equicontinuity_probe(std::span<const SampleSource> measures, std::span<const SplitTestFn> phis,
                                             std::span<const double> deltas, int threads = 0);

/// Six-function suite mixing lifts, products and z-only functions.
std::vector<SplitTestFn> default_test_suite(double T, double z_scale);

}  // namespace fpelab
