#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace fpelab {

inline constexpr const char* kAbstractTag = "abstract";

/// Diagonal data of the linear part (-A = diag(alpha_i^2)), the noise
/// covariance (Q = diag(a^i)) and the shift lambda of the auxiliary OU process.
/// alphas_sq may be longer than n_z; the extra entries are only used for
/// truncation-tail diagnostics.
struct Spectrum {
  std::vector<double> alphas_sq;
  std::vector<double> as;
  double lambda = 0.0;
  std::size_t n_v = 0;
  std::size_t n_z = 0;
  std::string basis_tag = kAbstractTag;

  /// Validates and returns a spectrum; throws Error on a violated invariant.
  static Spectrum create(std::vector<double> alphas_sq, std::vector<double> as, double lambda,
                         std::size_t n_v, std::size_t n_z, std::string basis_tag = kAbstractTag);

  /// alpha_i^2 = i^power, a^i = noise * i^(-noise_decay), i = 1..n.
  static Spectrum power_law(std::size_t n, double power, double noise, double noise_decay,
                            double lambda, std::size_t n_v, std::size_t n_z);

  std::size_t size() const noexcept { return alphas_sq.size(); }
  double rate(std::size_t i) const noexcept { return alphas_sq[i] + lambda; }
  Spectrum with_lambda(double new_lambda) const;
  void validate() const;

  nlohmann::json to_json() const;
  static Spectrum from_json(const nlohmann::json& j);
};

/// Truncated element of H as coefficients over an ordered eigenbasis.
struct FieldCoefficients {
  std::vector<double> coeffs;
  std::string basis_tag = kAbstractTag;

  FieldCoefficients() = default;
  explicit FieldCoefficients(std::vector<double> c, std::string tag = kAbstractTag)
      : coeffs(std::move(c)), basis_tag(std::move(tag)) {}

  static FieldCoefficients zeros(std::size_t n, std::string tag = kAbstractTag) {
    return FieldCoefficients(std::vector<double>(n, 0.0), std::move(tag));
  }
  std::size_t size() const noexcept { return coeffs.size(); }
  std::span<const double> view() const noexcept { return coeffs; }
};

/// Weights gamma_i >= 1, non-decreasing, of the tightness operator Gamma.
struct GammaWeights {
  std::vector<double> gammas;

  static GammaWeights create(std::vector<double> gammas);
  /// gamma_i = (alpha_i^2 / alpha_1^2)^theta.
  static GammaWeights power_law(const Spectrum& s, double theta);
};

double h_norm(const FieldCoefficients& x);
double h_norm(std::span<const double> x) noexcept;
double v_norm_sq(const FieldCoefficients& x, const Spectrum& s);
double v_norm_sq(std::span<const double> x, const Spectrum& s);

/// sum_{i<n} a^i / alpha_i^2.
double trace_ratio(const Spectrum& s, std::size_t n);
/// sum_{n<=i<size} a^i / alpha_i^2, the Cauchy tail beyond n available terms.
double trace_tail(const Spectrum& s, std::size_t n);
/// sum_{i>=n} a^i / (2 (alpha_i^2 + lambda)): H-variance neglected by truncating Z at n.
double ou_truncation_tail(const Spectrum& s, std::size_t n);
/// C_gamma = 1/2 sum_{i<n} gamma_i a^i / alpha_i^2.
double gamma_constant(const Spectrum& s, const GammaWeights& g, std::size_t n);

FieldCoefficients gamma_apply(const FieldCoefficients& x, const GammaWeights& g);
FieldCoefficients project_pi_n(const FieldCoefficients& x, std::size_t n);

// ---------------------------------------------------------------------------
// Torus basis

enum class Parity : std::uint8_t { Cos = 0, Sin = 1 };

struct TorusMode {
  std::array<int, 3> k{};        // half-lattice representative, unused tail = 0
  Parity parity = Parity::Cos;
  int pol = 1;                   // polarization index in 1..d-1
  std::array<double, 3> c{};     // unit vector with k.c = 0
  int k_norm_sq = 0;
  double eigenvalue = 0.0;       // nu |k|^2

  bool operator==(const TorusMode&) const = default;
};

/// Real divergence-free trigonometric eigenbasis of the Stokes operator on
/// [0, 2pi]^d. Each basis field is sqrt(2/(2pi)^d) c cos(k.xi) or ... sin(k.xi),
/// which has unit L^2 norm.
class TorusBasis {
 public:
  static TorusBasis build(int d, double kmax, double nu = 1.0);

  int dim() const noexcept { return d_; }
  double kmax() const noexcept { return kmax_; }
  double nu() const noexcept { return nu_; }
  std::size_t size() const noexcept { return modes_.size(); }
  std::span<const TorusMode> modes() const noexcept { return modes_; }
  const TorusMode& mode(std::size_t i) const { return modes_.at(i); }

  /// sup |e_i| of every basis field.
  double amplitude() const noexcept;
  /// Largest |k_j| over the first n modes.
  int max_frequency(std::size_t n) const;
  std::string tag() const;

  /// alpha_i^2 = nu |k|^2 and a^i = alpha_i^(-epsilon).
  Spectrum spectrum(double epsilon, double lambda, std::size_t n_v, std::size_t n_z) const;

  /// Value of basis field i at a point xi (length d) into out (length d).
  void evaluate_mode(std::size_t i, std::span<const double> xi, std::span<double> out) const;
  /// Field value sum_i coeffs[i] e_i(xi).
  void evaluate(std::span<const double> coeffs, std::span<const double> xi,
                std::span<double> out) const;

  nlohmann::json to_json() const;
  static TorusBasis from_json(const nlohmann::json& j);

  bool operator==(const TorusBasis&) const = default;

 private:
  int d_ = 2;
  double kmax_ = 1.0;
  double nu_ = 1.0;
  std::vector<TorusMode> modes_;
};

/// Precomputed tables of the first n basis fields on a uniform N^d grid.
/// Trapezoid quadrature on this grid integrates trigonometric polynomials of
/// per-axis degree < N exactly.
class TorusGrid {
 public:
  TorusGrid(const TorusBasis& basis, std::size_t n_modes, int points_per_axis);

  /// Smallest grid exact for products of `factors` fields of the first n modes.
  static int min_points(const TorusBasis& basis, std::size_t n_modes, int factors);

  int dim() const noexcept { return d_; }
  int points_per_axis() const noexcept { return n_axis_; }
  std::size_t num_points() const noexcept { return n_points_; }
  std::size_t num_modes() const noexcept { return n_modes_; }
  /// Quadrature weight (2pi/N)^d.
  double weight() const noexcept { return weight_; }
  std::span<const double> point(std::size_t g) const noexcept {
    return {points_.data() + g * static_cast<std::size_t>(d_), static_cast<std::size_t>(d_)};
  }
  const TorusMode& mode(std::size_t i) const noexcept { return modes_[i]; }

  /// Scalar phase table A*cos(k.xi_g) or A*sin(k.xi_g) for mode i.
  std::span<const double> phase(std::size_t i) const noexcept {
    return {phase_.data() + i * n_points_, n_points_};
  }
  /// Derivative of the phase with respect to (k.xi).
  std::span<const double> dphase(std::size_t i) const noexcept {
    return {dphase_.data() + i * n_points_, n_points_};
  }

  /// u[l*G + g] = sum_i coeffs[i] e_{i,l}(xi_g); coeffs may be shorter than n_modes.
  void synthesize(std::span<const double> coeffs, std::span<double> u) const;
  /// Also grad[(j*d + l)*G + g] = d_j u_l(xi_g).
  void synthesize_with_gradient(std::span<const double> coeffs, std::span<double> u,
                                std::span<double> grad) const;
  /// out[i] = <field, e_i>_{L^2} for i < out.size(); field laid out as u above.
  void project(std::span<const double> field, std::span<double> out) const;
  /// max_g |u(xi_g)|.
  double sup_norm(std::span<const double> coeffs) const;

 private:
  int d_;
  int n_axis_;
  std::size_t n_points_;
  std::size_t n_modes_;
  double weight_;
  std::vector<TorusMode> modes_;
  std::vector<double> points_;
  std::vector<double> phase_;
  std::vector<double> dphase_;
};

/// sup norm of the torus field on the uniform grid; the grid must exceed twice
/// the largest active frequency.
double e_norm(const FieldCoefficients& x, const TorusBasis& basis, int grid);

/// Norm of the Banach space E. For abstract spectra E = H and this is the
/// Euclidean norm; for the torus it is the grid sup norm.
class ENorm {
 public:
  static ENorm hilbert();
  static ENorm torus_sup(const TorusBasis& basis, std::size_t n_modes, int grid = 0);

  double operator()(std::span<const double> coeffs) const;
  bool is_hilbert() const noexcept { return grid_ == nullptr; }
  const TorusGrid* grid() const noexcept { return grid_.get(); }

 private:
  std::shared_ptr<const TorusGrid> grid_;
};

}  // namespace fpelab
