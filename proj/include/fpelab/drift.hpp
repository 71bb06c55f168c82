#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fpelab/spectrum.hpp"

namespace fpelab {

/// Nonlinear part f of the drift b^i(x,t) = -alpha_i^2 x_i + f^i(x,t).
class DriftModel {
 public:
  virtual ~DriftModel() = default;

  /// Exponent in |f^i(x,t)| <= C_i (1 + ||x||^p0).
  virtual double p0() const noexcept = 0;
  /// Exponent of ||z||_E in the coercivity inequality.
  virtual double k0() const noexcept = 0;
  virtual std::string name() const = 0;
  /// Largest number of coordinates the model accepts.
  virtual std::size_t max_modes() const noexcept = 0;

  /// out[i] = f^i(x, t) for i < out.size(). x holds the leading coordinates
  /// of the argument; missing coordinates are zero.
  virtual void eval_f(std::span<const double> x, double t, std::span<double> out) const = 0;

  FieldCoefficients eval_f(const FieldCoefficients& x, double t, std::size_t n) const;
};

class ZeroDrift final : public DriftModel {
 public:
  double p0() const noexcept override { return 1.0; }
  double k0() const noexcept override { return 2.0; }
  std::string name() const override { return "zero"; }
  std::size_t max_modes() const noexcept override { return static_cast<std::size_t>(-1); }
  using DriftModel::eval_f;
  void eval_f(std::span<const double> x, double t, std::span<double> out) const override;
};

/// Measurable drift with ||f(x,t)||_H <= C (1 + ||x||_H).
class LinearGrowthDrift final : public DriftModel {
 public:
  using Map = std::function<void(std::span<const double> x, double t, std::span<double> out)>;

  LinearGrowthDrift(Map map, double growth_constant, std::string label = "custom");

  /// f_i(x) = C tanh(x_i).
  static LinearGrowthDrift tanh(double growth_constant);
  /// f_i(x) = C sign(x_i) / sqrt(n) on the first n coordinates; discontinuous.
  static LinearGrowthDrift sign(double growth_constant, std::size_t n);

  double p0() const noexcept override { return 1.0; }
  double k0() const noexcept override { return 2.0; }
  std::string name() const override { return "linear-growth:" + label_; }
  std::size_t max_modes() const noexcept override { return static_cast<std::size_t>(-1); }
  double growth_constant() const noexcept { return C_; }
  using DriftModel::eval_f;
  void eval_f(std::span<const double> x, double t, std::span<double> out) const override;

 private:
  Map map_;
  double C_;
  std::string label_;
};

/// f^i(x) = -<B(x, e_i), x> with B(phi, psi) = -P_H (phi . grad) psi on the
/// torus, evaluated on a physical grid that integrates the cubic integrand
/// exactly.
class NavierStokesDrift final : public DriftModel {
 public:
  /// grid = 0 picks the smallest exact grid 3K+1; smaller grids throw AliasingError.
  NavierStokesDrift(const TorusBasis& basis, std::size_t n_modes, int grid = 0);

  double p0() const noexcept override { return 2.0; }
  double k0() const noexcept override { return 4.0; }
  std::string name() const override { return "navier-stokes"; }
  std::size_t max_modes() const noexcept override { return n_modes_; }
  const TorusBasis& basis() const noexcept { return basis_; }
  const TorusGrid& grid() const noexcept { return *grid_; }

  using DriftModel::eval_f;
  void eval_f(std::span<const double> x, double t, std::span<double> out) const override;

  /// out[i] = <B(x, y), e_i> = -int (x . grad) y . e_i.
  void bilinear(std::span<const double> x, std::span<const double> y, std::span<double> out) const;
  /// <B(x, y), w>.
  double trilinear(std::span<const double> x, std::span<const double> y, std::span<const double> w) const;

 private:
  TorusBasis basis_;
  std::size_t n_modes_;
  std::shared_ptr<const TorusGrid> grid_;
};

FieldCoefficients ns_bilinear(const NavierStokesDrift& model, const FieldCoefficients& x,
                              const FieldCoefficients& y);
/// |sum_i f^i(x) x_i|.
double ns_energy_null_check(const NavierStokesDrift& model, const FieldCoefficients& x);

/// Everything needed to evaluate the Kolmogorov operators and drive the solver.
struct Problem {
  Spectrum spectrum;
  std::shared_ptr<const DriftModel> drift;
  ENorm enorm;
  std::optional<TorusBasis> basis;
};

/// Constants in <f(v+z,t), v> <= eta ||v||_V^2 + C ||v||_H^2 (||z||_E^2 + 1) + C ||z||_E^k0 + C.
struct CoercivityConstants {
  double eta = 0.5;
  double C = 0.0;
};

/// Right side minus left side of the coercivity inequality.
double coercivity_margin(const DriftModel& model, std::span<const double> v, std::span<const double> z,
                         double t, const Spectrum& s, const ENorm& enorm, const CoercivityConstants& k);

/// Random (v, z) pairs for audits: v ~ N(0, v_scale^2) per coordinate, z_i ~ N(0, z_scale^2 a^i / (2 alpha_i^2)).
struct AuditSampler {
  std::uint64_t seed = 0;
  std::size_t n_v = 0;
  std::size_t n_z = 0;
  double v_scale = 1.0;
  double z_scale = 1.0;
  std::uint32_t salt = 0;

  void draw(std::size_t index, const Spectrum& s, std::span<double> v, std::span<double> z) const;
};

/// Smallest C making every pilot margin non-negative, times safety.
double fit_coercivity_constant(const DriftModel& model, const Spectrum& s, const ENorm& enorm, double eta,
                               const AuditSampler& sampler, std::size_t samples, double safety = 2.0);

struct AuditReport {
  std::size_t samples = 0;
  std::size_t violations = 0;
  double min_margin = 0.0;
};

AuditReport coercivity_audit(const DriftModel& model, const Spectrum& s, const ENorm& enorm,
                             const CoercivityConstants& k, const AuditSampler& sampler, std::size_t samples);

struct GrowthReport {
  /// max over samples of |f^i(x)| / (1 + ||x||_H^p0), per component.
  std::vector<double> constants;
  double max_constant = 0.0;
  double radius = 0.0;
};

/// Samples x uniformly in direction with ||x||_H uniform in [0, radius].
GrowthReport growth_bound_check(const DriftModel& model, std::size_t n, double radius, std::size_t samples,
                                std::uint64_t seed);

}  // namespace fpelab
