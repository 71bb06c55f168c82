#include "fpelab/measure.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "fpelab/common.hpp"
#include "fpelab/rng.hpp"
#include "fpelab/stats.hpp"

namespace fpelab {

// ---------------------------------------------------------------------------
// Kernels and time profiles

Kernel1D Kernel1D::bell(double center, double width) {
  require(width > 0.0 && std::isfinite(width), "Kernel1D::bell: width must be positive");
  return Kernel1D{KernelFamily::GaussBell, center, width};
}

Kernel1D Kernel1D::trig(double frequency, double phase) {
  require(std::isfinite(frequency) && std::isfinite(phase), "Kernel1D::trig: non-finite parameter");
  return Kernel1D{KernelFamily::Trig, frequency, phase};
}

void Kernel1D::eval(double x, double& g0, double& g1, double& g2) const {
  if (family == KernelFamily::GaussBell) {
    const double d = x - p;
    const double w2 = q * q;
    g0 = std::exp(-0.5 * d * d / w2);
    g1 = -d / w2 * g0;
    g2 = (d * d / w2 - 1.0) / w2 * g0;
  } else {
    const double a = p * x + q;
    const double c = std::cos(a);
    g0 = c;
    g1 = -p * std::sin(a);
    g2 = -p * p * c;
  }
}

double Kernel1D::value(double x) const {
  double g0, g1, g2;
  eval(x, g0, g1, g2);
  return g0;
}

double Kernel1D::bound(int order) const {
  if (family == KernelFamily::GaussBell) {
    switch (order) {
      case 0: return 1.0;
      case 1: return std::exp(-0.5) / q;
      default: return 1.0 / (q * q);
    }
  }
  switch (order) {
    case 0: return 1.0;
    case 1: return std::abs(p);
    default: return p * p;
  }
}

nlohmann::json Kernel1D::to_json() const {
  if (family == KernelFamily::GaussBell) return {{"family", "bell"}, {"center", p}, {"width", q}};
  return {{"family", "trig"}, {"frequency", p}, {"phase", q}};
}

Kernel1D Kernel1D::from_json(const nlohmann::json& j) {
  const auto fam = j.at("family").get<std::string>();
  if (fam == "bell") return bell(j.value("center", 0.0), j.value("width", 1.0));
  if (fam == "trig") return trig(j.value("frequency", 1.0), j.value("phase", 0.0));
  throw Error("unknown kernel family '" + fam + "'");
}

double TimeProfile::value(double t) const {
  if (kind == TimeFactor::Cosine) return std::cos(std::numbers::pi * t / (2.0 * T));
  const double r = 1.0 - t / T;
  return r * r;
}

double TimeProfile::derivative(double t) const {
  if (kind == TimeFactor::Cosine) {
    const double w = std::numbers::pi / (2.0 * T);
    return -w * std::sin(w * t);
  }
  return -2.0 * (1.0 - t / T) / T;
}

nlohmann::json TimeProfile::to_json() const {
  return {{"factor", kind == TimeFactor::Cosine ? "cos" : "quadratic"}, {"T", T}};
}

TimeProfile TimeProfile::from_json(const nlohmann::json& j) {
  TimeProfile tp;
  const auto f = j.value("factor", std::string("cos"));
  if (f == "cos") {
    tp.kind = TimeFactor::Cosine;
  } else if (f == "quadratic") {
    tp.kind = TimeFactor::Quadratic;
  } else {
    throw Error("unknown time factor '" + f + "'");
  }
  tp.T = j.at("T").get<double>();
  require(tp.T > 0.0, "time profile horizon must be positive");
  return tp;
}

// ---------------------------------------------------------------------------
// Product kernels

namespace {

/// scale * prod K_i(x_i) with gradient and Hessian diagonal by prefix/suffix products.
void product_derivatives(double scale, std::span<const Kernel1D> kernels, std::span<const double> x, double& P,
                         std::span<double> grad, std::span<double> hess) {
  const std::size_t N = kernels.size();
  require(x.size() >= N, "test function: argument has fewer coordinates than active dimensions");
  thread_local std::vector<double> g0, g1, g2, suffix;
  g0.resize(N);
  g1.resize(N);
  g2.resize(N);
  suffix.resize(N + 1);
  for (std::size_t i = 0; i < N; ++i) kernels[i].eval(x[i], g0[i], g1[i], g2[i]);
  suffix[N] = 1.0;
  for (std::size_t i = N; i-- > 0;) suffix[i] = suffix[i + 1] * g0[i];
  double prefix = scale;
  for (std::size_t i = 0; i < N; ++i) {
    grad[i] = prefix * g1[i] * suffix[i + 1];
    hess[i] = prefix * g2[i] * suffix[i + 1];
    prefix *= g0[i];
  }
  P = prefix;
}

double product_value(double scale, std::span<const Kernel1D> kernels, std::span<const double> x) {
  require(x.size() >= kernels.size(), "test function: argument has fewer coordinates than active dimensions");
  double P = scale;
  for (std::size_t i = 0; i < kernels.size(); ++i) P *= kernels[i].value(x[i]);
  return P;
}

nlohmann::json kernels_json(std::span<const Kernel1D> ks) {
  auto arr = nlohmann::json::array();
  for (const auto& k : ks) arr.push_back(k.to_json());
  return arr;
}

std::vector<Kernel1D> kernels_from_json(const nlohmann::json& j) {
  std::vector<Kernel1D> out;
  for (const auto& k : j) out.push_back(Kernel1D::from_json(k));
  return out;
}

}  // namespace

double CylindricalTestFn::spatial(std::span<const double> x) const { return product_value(scale, kernels, x); }

void CylindricalTestFn::spatial_derivatives(std::span<const double> x, double& P, std::span<double> grad,
                                            std::span<double> hess) const {
  require(grad.size() >= active() && hess.size() >= active(), "spatial_derivatives: output too short");
  product_derivatives(scale, kernels, x, P, grad, hess);
}

nlohmann::json CylindricalTestFn::to_json() const {
  return {{"id", id}, {"kind", "function"}, {"time", time.to_json()}, {"scale", scale}, {"x", kernels_json(kernels)}};
}

CylindricalTestFn CylindricalTestFn::from_json(const nlohmann::json& j) {
  CylindricalTestFn u;
  u.id = j.value("id", std::string("u"));
  u.time = TimeProfile::from_json(j.at("time"));
  u.scale = j.value("scale", 1.0);
  if (j.contains("x")) u.kernels = kernels_from_json(j.at("x"));
  return u;
}

SplitTestFn SplitTestFn::lift(const CylindricalTestFn& u) {
  SplitTestFn s;
  s.kind = Kind::Lift;
  s.id = u.id;
  s.time = u.time;
  s.scale = u.scale;
  s.v_kernels = u.kernels;
  return s;
}

SplitTestFn SplitTestFn::product(std::string id, TimeProfile time, double scale, std::vector<Kernel1D> v_kernels,
                                 std::vector<Kernel1D> z_kernels) {
  SplitTestFn s;
  s.kind = Kind::Product;
  s.id = std::move(id);
  s.time = time;
  s.scale = scale;
  s.v_kernels = std::move(v_kernels);
  s.z_kernels = std::move(z_kernels);
  return s;
}

CylindricalTestFn SplitTestFn::lifted() const {
  require(kind == Kind::Lift, "SplitTestFn::lifted: not a lift");
  return CylindricalTestFn{id, time, scale, v_kernels};
}

void combine_vz(std::span<const double> v, std::span<const double> z, std::span<double> x) {
  const std::size_t n = std::max(v.size(), z.size());
  require_same_size(x.size(), n, "combine_vz");
  for (std::size_t i = 0; i < n; ++i) {
    if (i < v.size() && i < z.size()) {
      x[i] = v[i] + z[i];
    } else {
      x[i] = i < v.size() ? v[i] : z[i];
    }
  }
}

std::vector<double> combine_vz(std::span<const double> v, std::span<const double> z) {
  std::vector<double> x(std::max(v.size(), z.size()));
  combine_vz(v, z, x);
  return x;
}

double SplitTestFn::spatial(std::span<const double> v, std::span<const double> z) const {
  if (kind == Kind::Lift) {
    thread_local std::vector<double> x;
    x.resize(std::max(v.size(), z.size()));
    combine_vz(v, z, x);
    return product_value(scale, v_kernels, x);
  }
  return product_value(scale, v_kernels, v) * product_value(1.0, z_kernels, z);
}

nlohmann::json SplitTestFn::to_json() const {
  if (kind == Kind::Lift) {
    return {{"id", id}, {"kind", "lift"}, {"time", time.to_json()}, {"scale", scale}, {"x", kernels_json(v_kernels)}};
  }
  return {{"id", id},
          {"kind", "product"},
          {"time", time.to_json()},
          {"scale", scale},
          {"v", kernels_json(v_kernels)},
          {"z", kernels_json(z_kernels)}};
}

SplitTestFn SplitTestFn::from_json(const nlohmann::json& j) {
  const auto kind = j.value("kind", std::string("product"));
  if (kind == "lift") return lift(CylindricalTestFn::from_json(j));
  if (kind != "product") throw Error("unknown test function kind '" + kind + "'");
  return product(j.value("id", std::string("u")), TimeProfile::from_json(j.at("time")), j.value("scale", 1.0),
                 j.contains("v") ? kernels_from_json(j.at("v")) : std::vector<Kernel1D>{},
                 j.contains("z") ? kernels_from_json(j.at("z")) : std::vector<Kernel1D>{});
}

// ---------------------------------------------------------------------------
// Operators

namespace {

struct Scratch {
  std::vector<double> gv, hv, gz, hz, x, f;
  void size(std::size_t nv, std::size_t nz) {
    gv.resize(nv);
    hv.resize(nv);
    gz.resize(nz);
    hz.resize(nz);
  }
};

Scratch& scratch() {
  thread_local Scratch s;
  return s;
}

double apply_L_core(const TimeProfile& time, double scale, std::span<const Kernel1D> kernels,
                    std::span<const double> x, double t, std::span<const double> f, const Spectrum& s) {
  const std::size_t N = kernels.size();
  require(f.size() >= N, "apply_L: drift components missing");
  require(s.size() >= N, "apply_L: spectrum shorter than active dimensions");
  Scratch& w = scratch();
  w.size(N, 0);
  double P = 0.0;
  product_derivatives(scale, kernels, x, P, w.gv, w.hv);
  double acc = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    acc += 0.5 * s.as[i] * w.hv[i] + (-s.alphas_sq[i] * x[i] + f[i]) * w.gv[i];
  }
  return time.derivative(t) * P + time.value(t) * acc;
}

std::size_t drift_components(const SplitTestFn& u) { return u.v_kernels.size(); }

}  // namespace

double apply_L_with_f(const CylindricalTestFn& u, std::span<const double> x, double t,
                      std::span<const double> f, const Spectrum& s) {
  return apply_L_core(u.time, u.scale, u.kernels, x, t, f, s);
}

double apply_L(const CylindricalTestFn& u, std::span<const double> x, double t, const DriftModel& model,
               const Spectrum& s) {
  std::vector<double> f(u.active(), 0.0);
  model.eval_f(x, t, f);
  return apply_L_with_f(u, x, t, f, s);
}

double apply_Ltilde_with_f(const SplitTestFn& u, std::span<const double> v, std::span<const double> z, double t,
                           std::span<const double> f, const Spectrum& s) {
  if (u.kind == SplitTestFn::Kind::Lift) {
    thread_local std::vector<double> x;
    x.resize(std::max(v.size(), z.size()));
    combine_vz(v, z, x);
    return apply_L_core(u.time, u.scale, u.v_kernels, x, t, f, s);
  }
  const std::size_t Nv = u.v_kernels.size();
  const std::size_t Nz = u.z_kernels.size();
  require(f.size() >= Nv, "apply_Ltilde: drift components missing");
  require(z.size() >= std::max(Nv, Nz), "apply_Ltilde: z has too few coordinates");
  require(s.size() >= std::max(Nv, Nz), "apply_Ltilde: spectrum shorter than active dimensions");
  Scratch& w = scratch();
  w.size(Nv, Nz);
  double Pv = 0.0, Pz = 0.0;
  product_derivatives(u.scale, u.v_kernels, v, Pv, w.gv, w.hv);
  product_derivatives(1.0, u.z_kernels, z, Pz, w.gz, w.hz);
  double zsum = 0.0;
  for (std::size_t i = 0; i < Nz; ++i) {
    zsum += 0.5 * s.as[i] * Pv * w.hz[i] - (s.alphas_sq[i] + s.lambda) * z[i] * Pv * w.gz[i];
  }
  double vsum = 0.0;
  for (std::size_t i = 0; i < Nv; ++i) {
    vsum += (-s.alphas_sq[i] * v[i] + f[i] + s.lambda * z[i]) * w.gv[i] * Pz;
  }
  return u.time.derivative(t) * Pv * Pz + u.time.value(t) * (zsum + vsum);
}

double apply_Ltilde(const SplitTestFn& u, std::span<const double> v, std::span<const double> z, double t,
                    const DriftModel& model, const Spectrum& s) {
  const auto x = combine_vz(v, z);
  std::vector<double> f(drift_components(u), 0.0);
  model.eval_f(x, t, f);
  return apply_Ltilde_with_f(u, v, z, t, f, s);
}

double apply_Ltilde_expanded(const SplitTestFn& u, std::span<const double> v, std::span<const double> z, double t,
                             const DriftModel& model, const Spectrum& s) {
  require(u.kind == SplitTestFn::Kind::Lift, "apply_Ltilde_expanded: needs a lifted test function");
  const std::size_t N = u.v_kernels.size();
  require(v.size() >= N && z.size() >= N, "apply_Ltilde_expanded: too few coordinates");
  const auto x = combine_vz(v, z);
  std::vector<double> f(N, 0.0), grad(N), hess(N);
  model.eval_f(x, t, f);
  double P = 0.0;
  product_derivatives(u.scale, u.v_kernels, x, P, grad, hess);
  // d/dz_i and d/dv_i of u(v+z) both equal the x-derivative.
  double zsum = 0.0, vsum = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    zsum += 0.5 * s.as[i] * hess[i] - (s.alphas_sq[i] + s.lambda) * z[i] * grad[i];
    vsum += (-s.alphas_sq[i] * v[i] + f[i] + s.lambda * z[i]) * grad[i];
  }
  return u.time.derivative(t) * P + u.time.value(t) * (zsum + vsum);
}

ShiftCheck shift_identity_check(const CylindricalTestFn& u, std::span<const ShiftPoint> points,
                                const DriftModel& model, const Spectrum& s) {
  const SplitTestFn lifted = SplitTestFn::lift(u);
  ShiftCheck out;
  out.points = points.size();
  for (const auto& p : points) {
    const auto x = combine_vz(p.v, p.z);
    const double lu = apply_L(u, x, p.t, model, s);
    const double lt = apply_Ltilde_expanded(lifted, p.v, p.z, p.t, model, s);
    const double dev = std::abs(lu - lt);
    out.max_abs = std::max(out.max_abs, dev);
    out.max_rel = std::max(out.max_rel, dev / (1.0 + std::abs(lu)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Initial measures

InitialMeasure InitialMeasure::point(std::vector<double> x) {
  InitialMeasure m;
  m.kind = Kind::PointMass;
  m.mean = std::move(x);
  m.p1 = std::numeric_limits<double>::infinity();
  return m;
}

InitialMeasure InitialMeasure::gaussian(std::vector<double> mean, std::vector<double> sd, double p1) {
  require_same_size(mean.size(), sd.size(), "InitialMeasure::gaussian");
  for (double v : sd) require(v >= 0.0, "InitialMeasure::gaussian: negative standard deviation");
  InitialMeasure m;
  m.kind = Kind::GaussianProduct;
  m.mean = std::move(mean);
  m.sd = std::move(sd);
  m.p1 = p1;
  return m;
}

InitialMeasure InitialMeasure::empirical(std::vector<std::vector<double>> rows, double p1) {
  require(!rows.empty(), "InitialMeasure::empirical: no samples");
  InitialMeasure m;
  m.kind = Kind::Empirical;
  m.rows = std::move(rows);
  m.p1 = p1;
  return m;
}

void InitialMeasure::sample(std::uint64_t seed, std::size_t m, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  const KeyedRng rng(seed);
  switch (kind) {
    case Kind::PointMass:
      for (std::size_t i = 0; i < std::min(out.size(), mean.size()); ++i) out[i] = mean[i];
      break;
    case Kind::GaussianProduct:
      for (std::size_t i = 0; i < std::min(out.size(), mean.size()); ++i) {
        out[i] = mean[i] + sd[i] * rng.normal(Stream::Initial, m, static_cast<std::uint32_t>(i), 0);
      }
      break;
    case Kind::Empirical: {
      const double u = rng.uniform(Stream::Initial, m, 0, 1);
      const auto r = std::min(rows.size() - 1, static_cast<std::size_t>(u * static_cast<double>(rows.size())));
      for (std::size_t i = 0; i < std::min(out.size(), rows[r].size()); ++i) out[i] = rows[r][i];
      break;
    }
  }
}

nlohmann::json InitialMeasure::to_json() const {
  nlohmann::json j;
  switch (kind) {
    case Kind::PointMass: j = {{"kind", "point"}, {"x", mean}}; break;
    case Kind::GaussianProduct: j = {{"kind", "gaussian"}, {"mean", mean}, {"sd", sd}, {"p1", p1}}; break;
    case Kind::Empirical: j = {{"kind", "empirical"}, {"rows", rows.size()}, {"p1", p1}}; break;
  }
  return j;
}

void lift_initial(const InitialMeasure& mu0, const LiftSpec& lift, std::uint64_t seed, std::size_t m,
                  std::span<double> v, std::span<double> z) {
  require(v.size() <= z.size(), "lift_initial: n_v must not exceed n_z");
  require(lift.theta >= 0.0 && lift.theta <= 1.0, "lift_initial: theta must lie in [0, 1]");
  thread_local std::vector<double> x;
  x.resize(z.size());
  mu0.sample(seed, m, x);
  bool second = lift.mode == LiftMode::DiracSecond;
  if (lift.mode == LiftMode::Convex) {
    second = KeyedRng(seed).uniform(Stream::Lift, m, 0, 0) < lift.theta;
  }
  if (second) {
    std::fill(v.begin(), v.end(), 0.0);
    std::copy(x.begin(), x.end(), z.begin());
  } else {
    std::copy(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(v.size()), v.begin());
    std::fill(z.begin(), z.end(), 0.0);
  }
}

// ---------------------------------------------------------------------------
// Empirical measures

EmpiricalProductMeasure::EmpiricalProductMeasure(std::vector<double> grid, std::size_t n_v, std::size_t n_z,
                                                 std::vector<double> samples, nlohmann::json provenance)
    : grid_(std::move(grid)), n_v_(n_v), n_z_(n_z), samples_(std::move(samples)), provenance_(std::move(provenance)) {
  const std::size_t stride = grid_.size() * (n_v_ + n_z_);
  require(stride > 0 && samples_.size() % stride == 0, "EmpiricalProductMeasure: sample array has the wrong size");
  M_ = samples_.size() / stride;
}

EmpiricalProductMeasure EmpiricalProductMeasure::materialize(const SampleSource& src, int threads) {
  require(src.product, "EmpiricalProductMeasure::materialize: not a product source");
  const std::size_t stride = src.path_size();
  std::vector<double> data(src.paths * stride);
  parallel_for(src.paths, threads, [&](std::size_t m) {
    src.fill(m, std::span<double>(data.data() + m * stride, stride));
  });
  return EmpiricalProductMeasure(src.grid, src.n_v, src.n_z, std::move(data), src.provenance);
}

std::span<const double> EmpiricalProductMeasure::v(std::size_t m, std::size_t j) const {
  const std::size_t w = n_v_ + n_z_;
  return {samples_.data() + (m * grid_.size() + j) * w, n_v_};
}

std::span<const double> EmpiricalProductMeasure::z(std::size_t m, std::size_t j) const {
  const std::size_t w = n_v_ + n_z_;
  return {samples_.data() + (m * grid_.size() + j) * w + n_v_, n_z_};
}

SampleSource EmpiricalProductMeasure::source() const {
  SampleSource src;
  src.grid = grid_;
  src.paths = M_;
  src.n_v = n_v_;
  src.n_z = n_z_;
  src.product = true;
  src.provenance = provenance_;
  const std::size_t stride = grid_.size() * (n_v_ + n_z_);
  src.fill = [this, stride](std::size_t m, std::span<double> out) {
    std::copy(samples_.begin() + static_cast<std::ptrdiff_t>(m * stride),
              samples_.begin() + static_cast<std::ptrdiff_t>((m + 1) * stride), out.begin());
  };
  return src;
}

EmpiricalMeasure::EmpiricalMeasure(std::vector<double> grid, std::size_t n_x, std::size_t head,
                                   std::vector<double> samples)
    : grid_(std::move(grid)), n_x_(n_x), head_(head), samples_(std::move(samples)) {
  const std::size_t stride = grid_.size() * n_x_;
  require(stride > 0 && samples_.size() % stride == 0, "EmpiricalMeasure: sample array has the wrong size");
  M_ = samples_.size() / stride;
}

std::span<const double> EmpiricalMeasure::x(std::size_t m, std::size_t j) const {
  return {samples_.data() + (m * grid_.size() + j) * n_x_, n_x_};
}

SampleSource EmpiricalMeasure::source() const {
  SampleSource src;
  src.grid = grid_;
  src.paths = M_;
  src.n_v = head_;
  src.n_z = n_x_;
  src.product = false;
  const std::size_t stride = grid_.size() * n_x_;
  src.fill = [this, stride](std::size_t m, std::span<double> out) {
    std::copy(samples_.begin() + static_cast<std::ptrdiff_t>(m * stride),
              samples_.begin() + static_cast<std::ptrdiff_t>((m + 1) * stride), out.begin());
  };
  return src;
}

EmpiricalMeasure pushforward_sum(const EmpiricalProductMeasure& mu) {
  require(mu.n_v() <= mu.n_z(), "pushforward_sum: n_v must not exceed n_z");
  const std::size_t J1 = mu.grid().size();
  std::vector<double> data(mu.paths() * J1 * mu.n_z());
  for (std::size_t m = 0; m < mu.paths(); ++m) {
    for (std::size_t j = 0; j < J1; ++j) {
      combine_vz(mu.v(m, j), mu.z(m, j), std::span<double>(data.data() + (m * J1 + j) * mu.n_z(), mu.n_z()));
    }
  }
  return EmpiricalMeasure(std::vector<double>(mu.grid().begin(), mu.grid().end()), mu.n_z(), mu.n_v(),
                          std::move(data));
}

SampleSource pushforward_sum(const SampleSource& product) {
  require(product.product, "pushforward_sum: source is not a product measure");
  require(product.n_v <= product.n_z, "pushforward_sum: n_v must not exceed n_z");
  SampleSource out = product;
  out.product = false;
  const SampleSource inner = product;
  out.fill = [inner](std::size_t m, std::span<double> x) {
    thread_local std::vector<double> buf;
    buf.resize(inner.path_size());
    inner.fill(m, buf);
    const std::size_t w = inner.width();
    for (std::size_t j = 0; j < inner.grid.size(); ++j) {
      const std::span<const double> row(buf.data() + j * w, w);
      combine_vz(row.first(inner.n_v), row.subspan(inner.n_v, inner.n_z), x.subspan(j * inner.n_z, inner.n_z));
    }
  };
  return out;
}

SampleSource product_source(const Problem& problem, const OUParams& noise, const SolverConfig& cfg,
                            const InitialMeasure& mu0, const LiftSpec& lift, std::size_t stride) {
  noise.validate();
  require(stride >= 1 && noise.steps() % stride == 0, "product_source: stride must divide the number of noise steps");
  require(static_cast<bool>(problem.drift), "product_source: problem has no drift model");
  require(cfg.n_v <= noise.spectrum.n_z, "product_source: n_v must not exceed n_z");
  const double scale = std::max(1.0, std::abs(cfg.lambda));
  require(std::abs(noise.spectrum.lambda - cfg.lambda) <= 1e-12 * scale &&
              std::abs(problem.spectrum.lambda - cfg.lambda) <= 1e-12 * scale,
          "product_source: lambda mismatch between noise, spectrum and solver");
  const auto fine_grid = noise.grid();
  SampleSource src;
  for (std::size_t j = 0; j < fine_grid.size(); j += stride) src.grid.push_back(fine_grid[j]);
  src.paths = noise.M;
  src.n_v = cfg.n_v;
  src.n_z = noise.spectrum.n_z;
  src.product = true;
  src.provenance = {{"seed", noise.seed}, {"M", noise.M}, {"dt", noise.dt}, {"T", noise.T},
                    {"lambda", noise.spectrum.lambda}, {"n_v", cfg.n_v}, {"n_z", noise.spectrum.n_z},
                    {"stride", stride}};
  auto drift = problem.drift;
  const Spectrum spectrum = problem.spectrum;
  const auto grid = src.grid;
  src.fill = [=](std::size_t m, std::span<double> out) {
    const std::size_t nv = cfg.n_v;
    const std::size_t nz = noise.spectrum.n_z;
    const std::size_t J1 = grid.size();
    std::vector<double> zfine(fine_grid.size() * nz), zpath(J1 * nz), v0(nv), z0(nz);
    lift_initial(mu0, lift, noise.seed, m, v0, z0);
    sample_path(noise, m, zfine);
    for (std::size_t j = 0; j < J1; ++j) {
      std::copy(zfine.begin() + static_cast<std::ptrdiff_t>(j * stride * nz),
                zfine.begin() + static_cast<std::ptrdiff_t>((j * stride + 1) * nz),
                zpath.begin() + static_cast<std::ptrdiff_t>(j * nz));
    }
    if (std::any_of(z0.begin(), z0.end(), [](double x) { return x != 0.0; })) {
      for (std::size_t i = 0; i < nz; ++i) {
        const double rate = noise.spectrum.rate(i);
        for (std::size_t j = 0; j < J1; ++j) zpath[j * nz + i] += std::exp(-rate * grid[j]) * z0[i];
      }
    }
    const PathView path{grid, zpath, nz, noise.spectrum.lambda};
    const auto tr = integrate_v(v0, path, *drift, spectrum, cfg);
    const std::size_t w = nv + nz;
    for (std::size_t j = 0; j < J1; ++j) {
      std::copy(tr.V.begin() + static_cast<std::ptrdiff_t>(j * nv),
                tr.V.begin() + static_cast<std::ptrdiff_t>((j + 1) * nv), out.begin() + static_cast<std::ptrdiff_t>(j * w));
      std::copy(zpath.begin() + static_cast<std::ptrdiff_t>(j * nz),
                zpath.begin() + static_cast<std::ptrdiff_t>((j + 1) * nz),
                out.begin() + static_cast<std::ptrdiff_t>(j * w + nv));
    }
  };
  return src;
}

// ---------------------------------------------------------------------------
// Residuals

nlohmann::json ResidualReport::to_json() const {
  return {{"test_fn_id", test_fn_id}, {"M", M},           {"dt", dt},
          {"residual", residual},     {"std_error", std_error}, {"bias_estimate", bias_estimate},
          {"guard_violations", guard_violations}};
}

ResidualReport ResidualReport::from_json(const nlohmann::json& j) {
  ResidualReport r;
  r.test_fn_id = j.at("test_fn_id").get<std::string>();
  r.M = j.at("M").get<std::size_t>();
  r.dt = j.at("dt").get<double>();
  r.residual = j.at("residual").get<double>();
  r.std_error = j.at("std_error").get<double>();
  r.bias_estimate = j.at("bias_estimate").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                    : j.at("bias_estimate").get<double>();
  r.guard_violations = j.value("guard_violations", std::size_t{0});
  return r;
}

namespace {

void check_horizon(std::span<const double> grid, const TimeProfile& tp, const std::string& id) {
  require(grid.size() >= 2, "residual: grid needs at least two points");
  if (std::abs(grid.back() - tp.T) > 1e-12 * std::max(1.0, tp.T)) {
    throw Error("grid/test-function horizon mismatch for '" + id + "': grid ends at " + std::to_string(grid.back()) +
                ", test function vanishes at " + std::to_string(tp.T));
  }
}

std::vector<double> trapezoid_weights(std::span<const double> grid, std::size_t stride) {
  std::vector<double> w(grid.size(), 0.0);
  for (std::size_t j = 0; j + stride < grid.size(); j += stride) {
    const double h = grid[j + stride] - grid[j];
    w[j] += 0.5 * h;
    w[j + stride] += 0.5 * h;
  }
  return w;
}

/// values[k*(J+1) + j] = operator value of function k at time j for one path; init[k] = u_k(X_0, 0).
using PathEvaluator = std::function<void(std::span<const double> path, std::span<double> values,
                                         std::span<double> init, std::size_t& violations)>;

struct PathContributions {
  std::vector<double> fine, coarse;  // [m*K + k]
  std::size_t violations = 0;
  bool even = false;
};

/// Per-path trapezoid estimates on the full grid and on every other grid point.
PathContributions path_contributions(const SampleSource& mu, std::size_t K, const PathEvaluator& eval, int threads) {
  const std::size_t J1 = mu.grid.size();
  const std::size_t M = mu.paths;
  require(M >= 1, "residual: empty measure");
  const auto wf = trapezoid_weights(mu.grid, 1);
  PathContributions pc;
  pc.even = (J1 - 1) % 2 == 0;
  const auto wc = pc.even ? trapezoid_weights(mu.grid, 2) : std::vector<double>(J1, 0.0);
  pc.fine.resize(M * K);
  pc.coarse.resize(M * K);
  std::vector<std::size_t> viol(M, 0);
  parallel_for(M, threads, [&](std::size_t m) {
    std::vector<double> path(mu.path_size()), values(K * J1), init(K);
    mu.fill(m, path);
    std::size_t violations = 0;
    eval(path, values, init, violations);
    for (std::size_t k = 0; k < K; ++k) {
      NeumaierSum sf, sc;
      for (std::size_t j = 0; j < J1; ++j) {
        sf.add(wf[j] * values[k * J1 + j]);
        if (pc.even) sc.add(wc[j] * values[k * J1 + j]);
      }
      sf.add(init[k]);
      sc.add(init[k]);
      pc.fine[m * K + k] = sf.value();
      pc.coarse[m * K + k] = sc.value();
    }
    viol[m] = violations;
  });
  for (std::size_t m = 0; m < M; ++m) pc.violations += viol[m];
  return pc;
}

std::vector<ResidualReport> residual_core(const SampleSource& mu, const std::vector<std::string>& ids,
                                          const PathEvaluator& eval, int threads) {
  const std::size_t K = ids.size();
  const std::size_t M = mu.paths;
  const auto pc = path_contributions(mu, K, eval, threads);
  std::vector<ResidualReport> out;
  std::vector<double> col(M), diff(M);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t m = 0; m < M; ++m) {
      col[m] = pc.fine[m * K + k];
      diff[m] = pc.fine[m * K + k] - pc.coarse[m * K + k];
    }
    const auto est = stats::mean_with_error(col);
    ResidualReport r;
    r.test_fn_id = ids[k];
    r.M = M;
    r.dt = mu.grid[1] - mu.grid[0];
    r.residual = est.mean;
    r.std_error = est.std_error;
    r.bias_estimate = pc.even ? compensated_sum(diff) / static_cast<double>(M) / 3.0
                              : std::numeric_limits<double>::quiet_NaN();
    r.guard_violations = pc.violations;
    out.push_back(r);
  }
  return out;
}

double guard_bound(const SplitTestFn& u, std::span<const double> v, std::span<const double> z,
                   std::span<const double> x, double t, const Spectrum& s, const IntegrabilityGuard& g) {
  const double growth = 1.0 + std::pow(h_norm(x), g.p0);
  const double sc = std::abs(u.scale);
  double inner = 0.0;
  if (u.kind == SplitTestFn::Kind::Lift) {
    for (std::size_t i = 0; i < u.v_kernels.size(); ++i) {
      inner += 0.5 * s.as[i] * u.v_kernels[i].bound(2) +
               (s.alphas_sq[i] * std::abs(x[i]) + g.growth_constants[i] * growth) * u.v_kernels[i].bound(1);
    }
  } else {
    for (std::size_t i = 0; i < u.z_kernels.size(); ++i) {
      inner += 0.5 * s.as[i] * u.z_kernels[i].bound(2) +
               (s.alphas_sq[i] + s.lambda) * std::abs(z[i]) * u.z_kernels[i].bound(1);
    }
    for (std::size_t i = 0; i < u.v_kernels.size(); ++i) {
      inner += (s.alphas_sq[i] * std::abs(v[i]) + g.growth_constants[i] * growth + s.lambda * std::abs(z[i])) *
               u.v_kernels[i].bound(1);
    }
  }
  return sc * (std::abs(u.time.derivative(t)) + std::abs(u.time.value(t)) * inner);
}

}  // namespace

namespace {

PathEvaluator tilde_evaluator(const SampleSource& mu, std::span<const SplitTestFn> suite, const Problem& problem,
                              const IntegrabilityGuard* guard, std::vector<std::string>& ids) {
  require(mu.product, "fpe_tilde_residual: needs a product measure");
  std::size_t nf = 0;
  for (const auto& u : suite) {
    check_horizon(mu.grid, u.time, u.id);
    ids.push_back(u.id);
    nf = std::max(nf, drift_components(u));
    require(u.active_v() <= mu.n_v && u.active_z() <= mu.n_z, "fpe_tilde_residual: test function exceeds n_v/n_z");
  }
  if (guard) require(guard->growth_constants.size() >= nf, "fpe_tilde_residual: guard constants too short");
  const Spectrum* s = &problem.spectrum;
  const DriftModel* model = problem.drift.get();
  const std::vector<double> grid = mu.grid;
  const std::size_t n_v = mu.n_v, n_z = mu.n_z, w = mu.width();
  return [=](std::span<const double> path, std::span<double> values, std::span<double> init,
             std::size_t& violations) {
    const std::size_t J1 = grid.size();
    std::vector<double> x(std::max(n_v, n_z)), f(nf);
    for (std::size_t j = 0; j < J1; ++j) {
      const auto row = path.subspan(j * w, w);
      const auto v = row.first(n_v);
      const auto z = row.subspan(n_v, n_z);
      const double t = grid[j];
      combine_vz(v, z, x);
      model->eval_f(x, t, f);
      for (std::size_t k = 0; k < suite.size(); ++k) {
        const double val = apply_Ltilde_with_f(suite[k], v, z, t, f, *s);
        values[k * J1 + j] = val;
        if (guard && !(std::abs(val) <= guard_bound(suite[k], v, z, x, t, *s, *guard) * (1.0 + 1e-9))) ++violations;
      }
    }
    const auto row0 = path.first(w);
    for (std::size_t k = 0; k < suite.size(); ++k) {
      init[k] = suite[k].value(row0.first(n_v), row0.subspan(n_v, n_z), grid[0]);
    }
  };
}

}  // namespace

std::vector<ResidualReport> fpe_tilde_residuals(const SampleSource& mu, std::span<const SplitTestFn> suite,
                                                const Problem& problem, const IntegrabilityGuard* guard,
                                                int threads) {
  std::vector<std::string> ids;
  const auto eval = tilde_evaluator(mu, suite, problem, guard, ids);
  return residual_core(mu, ids, eval, threads);
}

std::vector<ResidualReport> fpe_tilde_residuals_halving(const SampleSource& fine, const SampleSource& coarse,
                                                        std::span<const SplitTestFn> suite, const Problem& problem,
                                                        const IntegrabilityGuard* guard, int threads) {
  require(fine.paths == coarse.paths, "fpe_tilde_residuals_halving: path counts differ");
  require(fine.grid.size() == 2 * (coarse.grid.size() - 1) + 1, "fpe_tilde_residuals_halving: coarse grid must halve the fine grid");
  for (std::size_t j = 0; j < coarse.grid.size(); ++j) {
    require(std::abs(coarse.grid[j] - fine.grid[2 * j]) <= 1e-12 * std::max(1.0, fine.grid.back()),
            "fpe_tilde_residuals_halving: coarse grid must halve the fine grid");
  }
  std::vector<std::string> ids, ids_c;
  const auto ef = tilde_evaluator(fine, suite, problem, guard, ids);
  const auto ec = tilde_evaluator(coarse, suite, problem, guard, ids_c);
  const std::size_t K = ids.size(), M = fine.paths;
  const auto pf = path_contributions(fine, K, ef, threads);
  const auto pcs = path_contributions(coarse, K, ec, threads);
  std::vector<ResidualReport> out;
  std::vector<double> col(M), diff(M);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t m = 0; m < M; ++m) {
      col[m] = 2.0 * pf.fine[m * K + k] - pcs.fine[m * K + k];
      diff[m] = pf.fine[m * K + k] - pcs.fine[m * K + k];
    }
    const auto est = stats::mean_with_error(col);
    ResidualReport r;
    r.test_fn_id = ids[k];
    r.M = M;
    r.dt = fine.grid[1] - fine.grid[0];
    r.residual = est.mean;
    r.std_error = est.std_error;
    r.bias_estimate = compensated_sum(diff) / static_cast<double>(M);
    r.guard_violations = pf.violations + pcs.violations;
    out.push_back(r);
  }
  return out;
}

ResidualReport fpe_tilde_residual(const SampleSource& mu, const SplitTestFn& u, const Problem& problem, int threads) {
  return fpe_tilde_residuals(mu, std::span<const SplitTestFn>(&u, 1), problem, nullptr, threads).front();
}

std::vector<ResidualReport> fpe_residuals(const SampleSource& mu, std::span<const CylindricalTestFn> suite,
                                          const Problem& problem, int threads) {
  require(!mu.product, "fpe_residual: needs a measure on H (use pushforward_sum)");
  std::vector<std::string> ids;
  std::size_t nf = 0;
  for (const auto& u : suite) {
    check_horizon(mu.grid, u.time, u.id);
    ids.push_back(u.id);
    nf = std::max(nf, u.active());
    require(u.active() <= mu.n_v, "fpe_residual: test function exceeds the v+z coordinates");
  }
  const Spectrum& s = problem.spectrum;
  const DriftModel& model = *problem.drift;
  const std::size_t J1 = mu.grid.size();
  const std::size_t w = mu.width();
  PathEvaluator eval = [&](std::span<const double> path, std::span<double> values, std::span<double> init,
                           std::size_t&) {
    std::vector<double> f(nf);
    for (std::size_t j = 0; j < J1; ++j) {
      const auto x = path.subspan(j * w, w);
      const double t = mu.grid[j];
      model.eval_f(x, t, f);
      for (std::size_t k = 0; k < suite.size(); ++k) values[k * J1 + j] = apply_L_with_f(suite[k], x, t, f, s);
    }
    for (std::size_t k = 0; k < suite.size(); ++k) init[k] = suite[k].value(path.first(w), mu.grid[0]);
  };
  return residual_core(mu, ids, eval, threads);
}

ResidualReport fpe_residual(const SampleSource& mu, const CylindricalTestFn& u, const Problem& problem, int threads) {
  return fpe_residuals(mu, std::span<const CylindricalTestFn>(&u, 1), problem, threads).front();
}

double ou_residual_oracle(const SplitTestFn& u, const Spectrum& s, std::span<const double> grid) {
  require(u.kind == SplitTestFn::Kind::Product && u.v_kernels.empty(),
          "ou_residual_oracle: needs a product test function of z only");
  const std::size_t N = u.z_kernels.size();
  require(N <= s.size(), "ou_residual_oracle: spectrum too short");
  // m(t) = phi(t) scale prod_i G_i(var_i(t)), G_i(var) = E[K_i(sqrt(var) N(0,1))].
  auto moments = [&](double t, double& m, double& dm) {
    double prod = 1.0;
    std::vector<double> G(N), dG(N);
    for (std::size_t i = 0; i < N; ++i) {
      const Kernel1D& k = u.z_kernels[i];
      const double var = mode_variance(i, t, s);
      const double dvar = s.as[i] * std::exp(-2.0 * s.rate(i) * t);
      if (k.family == KernelFamily::GaussBell) {
        const double tot = var + k.q * k.q;
        G[i] = k.q / std::sqrt(tot) * std::exp(-0.5 * k.p * k.p / tot);
        dG[i] = G[i] * (-0.5 / tot + 0.5 * k.p * k.p / (tot * tot)) * dvar;
      } else {
        G[i] = std::cos(k.q) * std::exp(-0.5 * k.p * k.p * var);
        dG[i] = -0.5 * k.p * k.p * G[i] * dvar;
      }
      prod *= G[i];
    }
    double dprod = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      double others = 1.0;
      for (std::size_t l = 0; l < N; ++l) {
        if (l != i) others *= G[l];
      }
      dprod += dG[i] * others;
    }
    m = u.time.value(t) * u.scale * prod;
    dm = u.time.derivative(t) * u.scale * prod + u.time.value(t) * u.scale * dprod;
  };
  const auto w = trapezoid_weights(grid, 1);
  NeumaierSum acc;
  double m0 = 0.0, dm = 0.0;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    double m = 0.0;
    moments(grid[j], m, dm);
    if (j == 0) m0 = m;
    acc.add(w[j] * dm);
  }
  acc.add(m0);
  return acc.value();
}

// ---------------------------------------------------------------------------
// Marginals, tightness, observables

MarginalReport marginal_gaussian_check(const SampleSource& mu, const Spectrum& s, std::span<const std::size_t> js,
                                       double bands, int threads) {
  require(mu.product, "marginal_gaussian_check: needs a product measure");
  for (std::size_t j : js) require(j < mu.grid.size(), "marginal_gaussian_check: time index out of range");
  const std::size_t M = mu.paths;
  const std::size_t nz = mu.n_z;
  const std::size_t w = mu.width();
  std::vector<double> cols(js.size() * nz * M);
  parallel_for(M, threads, [&](std::size_t m) {
    std::vector<double> path(mu.path_size());
    mu.fill(m, path);
    for (std::size_t a = 0; a < js.size(); ++a) {
      for (std::size_t i = 0; i < nz; ++i) cols[(a * nz + i) * M + m] = path[js[a] * w + mu.n_v + i];
    }
  });
  MarginalReport rep;
  const double Md = static_cast<double>(M);
  for (std::size_t a = 0; a < js.size(); ++a) {
    for (std::size_t i = 0; i < nz; ++i) {
      const std::span<const double> col(cols.data() + (a * nz + i) * M, M);
      MarginalRow r;
      r.j = js[a];
      r.t = mu.grid[js[a]];
      r.mode = i;
      r.expected_variance = mode_variance(i, r.t, s);
      const auto mom = stats::moments(col);
      r.mean = mom.mean;
      r.variance = mom.variance;
      r.skewness = mom.skewness;
      r.excess_kurtosis = mom.excess_kurtosis;
      if (r.expected_variance == 0.0) {
        const bool zero = std::all_of(col.begin(), col.end(), [](double x) { return x == 0.0; });
        r.pass = zero;
        const double zs = zero ? 0.0 : std::numeric_limits<double>::infinity();
        r.z_scores = {zs, zs, zs, zs};
      } else {
        const double sv = r.expected_variance;
        r.z_scores[0] = std::abs(r.mean) / std::sqrt(sv / Md);
        r.z_scores[1] = std::abs(r.variance - sv) / (sv * std::sqrt(2.0 / (Md - 1.0)));
        r.z_scores[2] = std::abs(r.skewness) / std::sqrt(6.0 / Md);
        r.z_scores[3] = std::abs(r.excess_kurtosis) / std::sqrt(24.0 / Md);
        r.pass = std::all_of(r.z_scores.begin(), r.z_scores.end(), [&](double zs) { return zs <= bands; });
      }
      rep.all_pass = rep.all_pass && r.pass;
      rep.rows.push_back(r);
    }
  }
  return rep;
}

TightnessReport tightness_functional(const SampleSource& mu, const GammaWeights& g, const Spectrum& s, int threads) {
  require(mu.product, "tightness_functional: needs a product measure");
  require(g.gammas.size() >= mu.n_z, "tightness_functional: fewer weights than z modes");
  const std::size_t M = mu.paths;
  const std::size_t J1 = mu.grid.size();
  const std::size_t w = mu.width();
  const auto wt = trapezoid_weights(mu.grid, 1);
  std::vector<double> vp(M), zp(M), tot(M);
  parallel_for(M, threads, [&](std::size_t m) {
    std::vector<double> path(mu.path_size());
    mu.fill(m, path);
    NeumaierSum a, b;
    for (std::size_t j = 0; j < J1; ++j) {
      const auto row = std::span<const double>(path).subspan(j * w, w);
      a.add(wt[j] * v_norm_sq(row.first(mu.n_v), s));
      double gz = 0.0;
      for (std::size_t i = 0; i < mu.n_z; ++i) gz += g.gammas[i] * row[mu.n_v + i] * row[mu.n_v + i];
      b.add(wt[j] * gz);
    }
    vp[m] = a.value();
    zp[m] = b.value();
    tot[m] = vp[m] + zp[m];
  });
  TightnessReport r;
  const auto ev = stats::mean_with_error(vp), ez = stats::mean_with_error(zp), et = stats::mean_with_error(tot);
  r.v_part = ev.mean;
  r.v_se = ev.std_error;
  r.z_part = ez.mean;
  r.z_se = ez.std_error;
  r.total = et.mean;
  r.total_se = et.std_error;
  r.c_gamma = gamma_constant(s, g, mu.n_z);
  r.z_bound = mu.grid.back() * r.c_gamma;
  return r;
}

std::vector<SeriesPoint> observable_series(const SampleSource& mu, const SplitTestFn& phi, int threads) {
  require(mu.product, "observable_series: needs a product measure");
  const std::size_t M = mu.paths;
  const std::size_t J1 = mu.grid.size();
  const std::size_t w = mu.width();
  std::vector<double> vals(J1 * M);
  parallel_for(M, threads, [&](std::size_t m) {
    std::vector<double> path(mu.path_size());
    mu.fill(m, path);
    for (std::size_t j = 0; j < J1; ++j) {
      const auto row = std::span<const double>(path).subspan(j * w, w);
      vals[j * M + m] = phi.spatial(row.first(mu.n_v), row.subspan(mu.n_v, mu.n_z));
    }
  });
  std::vector<SeriesPoint> out(J1);
  for (std::size_t j = 0; j < J1; ++j) {
    const auto est = stats::mean_with_error(std::span<const double>(vals.data() + j * M, M));
    out[j] = {mu.grid[j], est.mean, est.std_error};
  }
  return out;
}

std::vector<ModulusRow> equicontinuity_probe(std::span<const SampleSource> measures, std::span<const SplitTestFn> phis,
                                             std::span<const double> deltas, int threads) {
  std::vector<ModulusRow> out;
  for (double d : deltas) out.push_back({d, 0.0});
  for (const auto& mu : measures) {
    for (const auto& phi : phis) {
      const auto series = observable_series(mu, phi, threads);
      for (auto& row : out) {
        for (std::size_t a = 0; a < series.size(); ++a) {
          for (std::size_t b = a + 1; b < series.size(); ++b) {
            if (series[b].t - series[a].t > row.delta * (1.0 + 1e-12)) break;
            row.modulus = std::max(row.modulus, std::abs(series[b].mean - series[a].mean));
          }
        }
      }
    }
  }
  return out;
}

std::vector<SplitTestFn> default_test_suite(double T, double z_scale) {
  require(T > 0.0 && z_scale > 0.0, "default_test_suite: T and z_scale must be positive");
  const TimeProfile cosine{TimeFactor::Cosine, T};
  const TimeProfile quad{TimeFactor::Quadratic, T};
  std::vector<SplitTestFn> suite;
  suite.push_back(SplitTestFn::lift({"lift-bell-1", cosine, 1.0, {Kernel1D::bell(0.1, 1.0)}}));
  suite.push_back(SplitTestFn::lift({"lift-bell-2", cosine, 1.0, {Kernel1D::bell(0.0, 0.8), Kernel1D::bell(0.2, 1.2)}}));
  suite.push_back(SplitTestFn::lift(
      {"lift-trig-3", quad, 1.0, {Kernel1D::trig(1.0, 0.3), Kernel1D::trig(0.7, -0.2), Kernel1D::trig(1.3, 0.5)}}));
  suite.push_back(SplitTestFn::product("prod-bell-vz", cosine, 1.0, {Kernel1D::bell(0.0, 1.0)},
                                       {Kernel1D::bell(0.0, 2.0 * z_scale)}));
  suite.push_back(SplitTestFn::product("prod-trig-v2", cosine, 1.0,
                                       {Kernel1D::trig(0.5, 0.0), Kernel1D::trig(0.8, 0.4)}, {}));
  suite.push_back(SplitTestFn::product("prod-z-only", quad, 1.0, {},
                                       {Kernel1D::bell(0.0, 2.0 * z_scale), Kernel1D::bell(0.5 * z_scale, 3.0 * z_scale)}));
  return suite;
}

}  // namespace fpelab
