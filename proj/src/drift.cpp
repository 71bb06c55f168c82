#include "fpelab/drift.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fpelab/common.hpp"
#include "fpelab/rng.hpp"

namespace fpelab {

FieldCoefficients DriftModel::eval_f(const FieldCoefficients& x, double t, std::size_t n) const {
  std::vector<double> out(n, 0.0);
  eval_f(x.view(), t, out);
  return FieldCoefficients(std::move(out), x.basis_tag);
}

void ZeroDrift::eval_f(std::span<const double>, double, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
}

// ---------------------------------------------------------------------------
// Linear growth

LinearGrowthDrift::LinearGrowthDrift(Map map, double growth_constant, std::string label)
    : map_(std::move(map)), C_(growth_constant), label_(std::move(label)) {
  require(static_cast<bool>(map_), "LinearGrowthDrift: empty map");
  require(C_ > 0.0 && std::isfinite(C_), "LinearGrowthDrift: growth constant must be positive");
}

LinearGrowthDrift LinearGrowthDrift::tanh(double growth_constant) {
  return LinearGrowthDrift(
      [growth_constant](std::span<const double> x, double, std::span<double> out) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = i < x.size() ? growth_constant * std::tanh(x[i]) : 0.0;
      },
      growth_constant, "tanh");
}

LinearGrowthDrift LinearGrowthDrift::sign(double growth_constant, std::size_t n) {
  require(n >= 1, "LinearGrowthDrift::sign: n must be >= 1");
  const double scale = growth_constant / std::sqrt(static_cast<double>(n));
  return LinearGrowthDrift(
      [scale, n](std::span<const double> x, double, std::span<double> out) {
        for (std::size_t i = 0; i < out.size(); ++i) {
          const double xi = i < x.size() ? x[i] : 0.0;
          out[i] = i < n ? (xi >= 0.0 ? scale : -scale) : 0.0;
        }
      },
      growth_constant, "sign");
}

void LinearGrowthDrift::eval_f(std::span<const double> x, double t, std::span<double> out) const {
  map_(x, t, out);
}

// ---------------------------------------------------------------------------
// Navier-Stokes

NavierStokesDrift::NavierStokesDrift(const TorusBasis& basis, std::size_t n_modes, int grid)
    : basis_(basis), n_modes_(n_modes) {
  require(n_modes >= 1 && n_modes <= basis.size(), "NavierStokesDrift: n_modes out of range");
  const int needed = TorusGrid::min_points(basis, n_modes, 3);
  if (grid == 0) grid = needed;
  if (grid < needed) {
    throw AliasingError("NavierStokesDrift: grid of " + std::to_string(grid) +
                        " points per axis cannot integrate the cubic nonlinearity exactly (need " +
                        std::to_string(needed) + ")");
  }
  grid_ = std::make_shared<const TorusGrid>(basis, n_modes, grid);
}

namespace {

void check_ns_sizes(std::size_t n, std::size_t limit, const char* what) {
  if (n > limit) throw DimensionError(std::string(what) + ": more coordinates than the drift grid holds");
}

}  // namespace

void NavierStokesDrift::eval_f(std::span<const double> x, double, std::span<double> out) const {
  check_ns_sizes(x.size(), n_modes_, "NavierStokesDrift::eval_f");
  check_ns_sizes(out.size(), n_modes_, "NavierStokesDrift::eval_f");
  const TorusGrid& g = *grid_;
  const std::size_t G = g.num_points();
  const int d = g.dim();
  thread_local std::vector<double> u;
  u.assign(static_cast<std::size_t>(d) * G, 0.0);
  g.synthesize(x, u);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const TorusMode& m = g.mode(i);
    const auto dph = g.dphase(i);
    double acc = 0.0;
    for (std::size_t p = 0; p < G; ++p) {
      double cu = 0.0, ku = 0.0;
      for (int l = 0; l < d; ++l) {
        const double ul = u[static_cast<std::size_t>(l) * G + p];
        cu += m.c[l] * ul;
        ku += m.k[l] * ul;
      }
      acc += dph[p] * cu * ku;
    }
    out[i] = g.weight() * acc;
  }
}

void NavierStokesDrift::bilinear(std::span<const double> x, std::span<const double> y,
                                 std::span<double> out) const {
  check_ns_sizes(x.size(), n_modes_, "ns_bilinear");
  check_ns_sizes(y.size(), n_modes_, "ns_bilinear");
  check_ns_sizes(out.size(), n_modes_, "ns_bilinear");
  const TorusGrid& g = *grid_;
  const std::size_t G = g.num_points();
  const auto d = static_cast<std::size_t>(g.dim());
  std::vector<double> u(d * G, 0.0), w(d * G, 0.0), grad(d * d * G, 0.0);
  g.synthesize(x, u);
  g.synthesize_with_gradient(y, w, grad);
  std::vector<double> adv(d * G, 0.0);
  for (std::size_t l = 0; l < d; ++l) {
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t p = 0; p < G; ++p) adv[l * G + p] -= u[j * G + p] * grad[(j * d + l) * G + p];
    }
  }
  g.project(adv, out);
}

double NavierStokesDrift::trilinear(std::span<const double> x, std::span<const double> y,
                                    std::span<const double> w) const {
  std::vector<double> b(w.size(), 0.0);
  bilinear(x, y, b);
  NeumaierSum acc;
  for (std::size_t i = 0; i < w.size(); ++i) acc.add(b[i] * w[i]);
  return acc.value();
}

FieldCoefficients ns_bilinear(const NavierStokesDrift& model, const FieldCoefficients& x,
                              const FieldCoefficients& y) {
  if (x.basis_tag != y.basis_tag) throw DimensionError("ns_bilinear: basis tags differ");
  std::vector<double> out(std::max(x.size(), y.size()), 0.0);
  model.bilinear(x.view(), y.view(), out);
  return FieldCoefficients(std::move(out), x.basis_tag);
}

double ns_energy_null_check(const NavierStokesDrift& model, const FieldCoefficients& x) {
  std::vector<double> f(x.size(), 0.0);
  model.eval_f(x.view(), 0.0, f);
  NeumaierSum acc;
  for (std::size_t i = 0; i < f.size(); ++i) acc.add(f[i] * x.coeffs[i]);
  return std::abs(acc.value());
}

// ---------------------------------------------------------------------------
// Coercivity and growth audits

double coercivity_margin(const DriftModel& model, std::span<const double> v, std::span<const double> z,
                         double t, const Spectrum& s, const ENorm& enorm, const CoercivityConstants& k) {
  require(z.size() >= v.size(), "coercivity_margin: z must have at least as many coordinates as v");
  std::vector<double> x(z.begin(), z.end());
  for (std::size_t i = 0; i < v.size(); ++i) x[i] += v[i];
  std::vector<double> f(v.size(), 0.0);
  model.eval_f(x, t, f);
  NeumaierSum lhs;
  for (std::size_t i = 0; i < v.size(); ++i) lhs.add(f[i] * v[i]);
  const double vh = h_norm(v);
  const double ze = enorm(z);
  const double rhs = k.eta * v_norm_sq(v, s) + k.C * vh * vh * (ze * ze + 1.0) + k.C * std::pow(ze, model.k0()) + k.C;
  return rhs - lhs.value();
}

void AuditSampler::draw(std::size_t index, const Spectrum& s, std::span<double> v, std::span<double> z) const {
  require_same_size(v.size(), n_v, "AuditSampler v");
  require_same_size(z.size(), n_z, "AuditSampler z");
  const KeyedRng rng(seed);
  const std::uint32_t base = salt << 1;
  for (std::size_t i = 0; i < n_v; ++i) {
    v[i] = v_scale * rng.normal(Stream::Audit, index, static_cast<std::uint32_t>(i), base);
  }
  for (std::size_t i = 0; i < n_z; ++i) {
    const double sd = std::sqrt(s.as[i] / (2.0 * s.alphas_sq[i]));
    z[i] = z_scale * sd * rng.normal(Stream::Audit, index, static_cast<std::uint32_t>(i), base | 1u);
  }
}

namespace {

/// Coefficient of C in the coercivity inequality and the C-free remainder.
std::pair<double, double> coercivity_terms(const DriftModel& model, std::span<const double> v,
                                           std::span<const double> z, const Spectrum& s, const ENorm& enorm,
                                           double eta) {
  CoercivityConstants zero{eta, 0.0};
  const double free_part = coercivity_margin(model, v, z, 0.0, s, enorm, zero);
  const double vh = h_norm(v);
  const double ze = enorm(z);
  const double weight = vh * vh * (ze * ze + 1.0) + std::pow(ze, model.k0()) + 1.0;
  return {weight, free_part};
}

}  // namespace

double fit_coercivity_constant(const DriftModel& model, const Spectrum& s, const ENorm& enorm, double eta,
                               const AuditSampler& sampler, std::size_t samples, double safety) {
  require(safety >= 1.0, "fit_coercivity_constant: safety factor must be >= 1");
  std::vector<double> v(sampler.n_v), z(sampler.n_z);
  double needed = 0.0;
  for (std::size_t m = 0; m < samples; ++m) {
    sampler.draw(m, s, v, z);
    const auto [weight, free_part] = coercivity_terms(model, v, z, s, enorm, eta);
    needed = std::max(needed, -free_part / weight);
  }
  return safety * needed;
}

AuditReport coercivity_audit(const DriftModel& model, const Spectrum& s, const ENorm& enorm,
                             const CoercivityConstants& k, const AuditSampler& sampler, std::size_t samples) {
  AuditReport rep;
  rep.samples = samples;
  rep.min_margin = std::numeric_limits<double>::infinity();
  std::vector<double> v(sampler.n_v), z(sampler.n_z);
  for (std::size_t m = 0; m < samples; ++m) {
    sampler.draw(m, s, v, z);
    const double margin = coercivity_margin(model, v, z, 0.0, s, enorm, k);
    rep.min_margin = std::min(rep.min_margin, margin);
    if (margin < 0.0) ++rep.violations;
  }
  return rep;
}

GrowthReport growth_bound_check(const DriftModel& model, std::size_t n, double radius, std::size_t samples,
                                std::uint64_t seed) {
  require(n >= 1 && n <= model.max_modes(), "growth_bound_check: n out of range");
  require(radius > 0.0, "growth_bound_check: radius must be positive");
  GrowthReport rep;
  rep.radius = radius;
  rep.constants.assign(n, 0.0);
  const KeyedRng rng(seed);
  std::vector<double> x(n), f(n);
  for (std::size_t m = 0; m < samples; ++m) {
    for (std::size_t i = 0; i < n; ++i) x[i] = rng.normal(Stream::Audit, m, static_cast<std::uint32_t>(i), 0x100u);
    const double norm = h_norm(x);
    const double target = radius * rng.uniform(Stream::Audit, m, 0, 0x101u);
    if (norm > 0.0) {
      for (double& xi : x) xi *= target / norm;
    }
    model.eval_f(x, 0.0, f);
    const double denom = 1.0 + std::pow(h_norm(x), model.p0());
    for (std::size_t i = 0; i < n; ++i) rep.constants[i] = std::max(rep.constants[i], std::abs(f[i]) / denom);
  }
  rep.max_constant = *std::max_element(rep.constants.begin(), rep.constants.end());
  return rep;
}

}  // namespace fpelab
