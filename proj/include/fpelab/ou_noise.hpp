#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpelab/spectrum.hpp"

namespace fpelab {

/// Sampling parameters of the truncated auxiliary OU process Z^lambda.
struct OUParams {
  Spectrum spectrum;
  double T = 1.0;
  double dt = 0.01;
  std::uint64_t seed = 0;
  std::size_t M = 1;

  /// Number of steps J = floor(T/dt) (with a relative rounding allowance).
  std::size_t steps() const;
  std::vector<double> grid() const;
  std::size_t n_z() const noexcept { return spectrum.n_z; }
  void validate() const;
  OUParams with_lambda(double lambda) const;
};

/// M sampled paths, values laid out row-major as M x (J+1) x n_z.
class OUPathEnsemble {
 public:
  OUPathEnsemble(OUParams params, std::vector<double> values);

  const OUParams& params() const noexcept { return params_; }
  std::span<const double> grid() const noexcept { return grid_; }
  std::size_t paths() const noexcept { return params_.M; }
  std::size_t times() const noexcept { return grid_.size(); }
  std::size_t modes() const noexcept { return params_.spectrum.n_z; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<const double> path(std::size_t m) const;
  std::span<const double> at(std::size_t m, std::size_t j) const;

 private:
  OUParams params_;
  std::vector<double> grid_;
  std::vector<double> values_;
};

/// Exact transition of mode i over dt: e^{-(alpha_i^2+lambda)dt} z + sigma*noise.
double ou_exact_step(double z, std::size_t i, double dt, const Spectrum& s, double noise);

/// Var(Z_t^i) = a^i (1 - e^{-2t(alpha_i^2+lambda)}) / (2(alpha_i^2+lambda)).
double mode_variance(std::size_t i, double t, const Spectrum& s);

/// Samples path m into out ((J+1) x n_z). Paths are independent of each other
/// and of the worker layout.
void sample_path(const OUParams& p, std::size_t m, std::span<double> out);

OUPathEnsemble sample_ensemble(const OUParams& p, int threads = 0);

/// ||Z_t||_E at every grid time of a path laid out (J+1) x n_z.
std::vector<double> e_norm_series(std::span<const double> path, std::size_t n_z, const ENorm& enorm);

/// Trapezoid approximation of int_0^T ||Z_t||_E^power dt.
double l2E_norm_path(std::span<const double> path, std::span<const double> grid, std::size_t n_z,
                     const ENorm& enorm, double power = 2.0);

/// int_0^T ||Z_t||_E^2 dt for every path of a freshly sampled ensemble,
/// computed path by path without storing the ensemble.
std::vector<double> path_energy_integrals(const OUParams& p, const ENorm& enorm, int threads = 0);

/// Which small-noise event the calibration and probe use.
enum class NoiseEvent {
  /// ||Z||_{L^2(0,T;E)} <= r, i.e. int ||Z||_E^2 dt <= r^2.
  L2NormBelowR,
  /// int ||Z||_E^2 dt <= r, as literally written in the Fernique step.
  IntegralBelowR,
};

struct ProbeResult {
  double lambda = 0.0;
  double probability = 0.0;  // estimate of P(int ||Z||_E^2 dt > r^2)
  double lo = 0.0;
  double hi = 0.0;
  /// r^-2 (T/2) sum_i a^i/(alpha_i^2+lambda): Chebyshev bound, valid when E = H.
  double chebyshev_bound = 0.0;
};

std::vector<ProbeResult> assumption4_probe(std::span<const double> lambdas, double r, const OUParams& base,
                                           const ENorm& enorm, int threads = 0);

enum class FerniqueStatus { Ok, TailDominated, Divergent };

struct FerniqueResult {
  double estimate = 0.0;
  double std_error = 0.0;
  double log_estimate = 0.0;
  /// Share of the largest single summand in the sample sum.
  double max_share = 0.0;
  FerniqueStatus status = FerniqueStatus::Ok;
};

/// e^{1/4} + e^2/(e^2 - 1).
double fernique_bound();
/// 1/(e^{-3/2} + 1).
double calibration_threshold();

/// Monte-Carlo estimate of E[exp(K int_0^T ||Z_t^lambda||_E^2 dt)] with
/// log-sum-exp accumulation.
FerniqueResult fernique_estimate(double K, double lambda, const OUParams& p, const ENorm& enorm,
                                 double tail_fraction = 0.5, int threads = 0);
FerniqueResult fernique_from_integrals(double K, std::span<const double> integrals,
                                       double tail_fraction = 0.5);

struct CalibrationResult {
  double lambda0 = 0.0;
  std::size_t grid_index = 0;
  double r = 0.0;
  double probability = 0.0;
  double lower_bound = 0.0;
  double threshold = 0.0;
  /// (lambda, probability, Wilson lower bound) for every grid point tried.
  std::vector<std::array<double, 3>> trace;
};

/// Smallest lambda on an increasing grid whose Wilson lower bound of
/// P(small-noise event with r = 1/(8 sqrt K)) clears calibration_threshold().
/// Throws CalibrationError when no grid point qualifies.
CalibrationResult calibrate_lambda(double K, const OUParams& p, std::span<const double> lambda_grid,
                                   const ENorm& enorm, NoiseEvent event = NoiseEvent::L2NormBelowR,
                                   int threads = 0);

struct R0Result {
  double mean_sup = 0.0;  // mean over paths of sup_t ||lhs - rhs||_H
  double max_sup = 0.0;
  double dt = 0.0;        // quadrature step actually used
};

/// Pathwise check of Z^lambda = Z^0 - lambda int_0^t e^{-(alpha^2+lambda)(t-s)} Z^0_s ds
/// with both processes sampled exactly on the fine grid from the same Brownian
/// increments; the convolution is a trapezoid sum on every `stride`-th point.
R0Result r0_identity_residual(double lambda, const OUParams& p, std::size_t stride = 1, int threads = 0);

/// Coupled exact samples (Z^0, Z^lambda) of one path, each (J+1) x n_z.
void sample_coupled_path(const OUParams& p, double lambda, std::size_t m, std::span<double> z0,
                         std::span<double> zl);

/// Trapezoid recursion for lambda int_0^{t_j} e^{-rate (t_j - s)} y(s) ds on a uniform grid.
std::vector<double> exponential_convolution(std::span<const double> y, double rate, double lambda, double h);

struct HolderReport {
  std::vector<double> distances;
  std::vector<double> mean_sq_increments;
  std::vector<double> increment_std_errors;
  double fitted_exponent = 0.0;
  double exponent_se = 0.0;
  /// max over pairs of E|dZ|^2 / |dxi|^{eps/4}.
  double fitted_constant = 0.0;
  /// Closed-form C_1(lambda) = C sum a^i alpha_i^{eps/4}/(alpha_i^2+lambda).
  double c1_closed_form = 0.0;
  double c1_prefactor = 0.0;
  double target_exponent = 0.0;
};

/// C_1(lambda) partial sum over the first n modes with the basis Lipschitz prefactor.
double holder_c1(const TorusBasis& basis, const Spectrum& s, double epsilon, double lambda, std::size_t n);

/// Monte-Carlo spatial increments of Z_t^lambda between point pairs at time t.
HolderReport holder_probe(const TorusBasis& basis, double epsilon, double lambda, double t,
                          std::span<const std::array<std::array<double, 3>, 2>> pairs, const OUParams& p,
                          int threads = 0);

struct ModeMomentRow {
  std::size_t mode = 0;
  double t = 0.0;
  double mean = 0.0;
  double variance = 0.0;
  double expected_variance = 0.0;
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
};

std::vector<ModeMomentRow> ou_moment_table(const OUPathEnsemble& e, std::size_t j);

/// Binary layout: "FPELAB01", u64 little-endian header length, UTF-8 JSON
/// header, then the row-major IEEE-754 double array.
void write_array_binary(const std::string& path, const nlohmann::json& header, std::span<const double> data);
std::vector<double> read_array_binary(const std::string& path, nlohmann::json& header);

nlohmann::json ensemble_header(const OUPathEnsemble& e);

}  // namespace fpelab
