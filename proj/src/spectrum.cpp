#include "fpelab/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <tuple>

#include "fpelab/common.hpp"

namespace fpelab {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Spectrum

Spectrum Spectrum::create(std::vector<double> alphas_sq, std::vector<double> as, double lambda,
                          std::size_t n_v, std::size_t n_z, std::string basis_tag) {
  Spectrum s;
  s.alphas_sq = std::move(alphas_sq);
  s.as = std::move(as);
  s.lambda = lambda;
  s.n_v = n_v;
  s.n_z = n_z;
  s.basis_tag = std::move(basis_tag);
  s.validate();
  return s;
}

Spectrum Spectrum::power_law(std::size_t n, double power, double noise, double noise_decay,
                             double lambda, std::size_t n_v, std::size_t n_z) {
  std::vector<double> alphas(n), as(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double idx = static_cast<double>(i + 1);
    alphas[i] = std::pow(idx, power);
    as[i] = noise * std::pow(idx, -noise_decay);
  }
  return create(std::move(alphas), std::move(as), lambda, n_v, n_z);
}

Spectrum Spectrum::with_lambda(double new_lambda) const {
  Spectrum s = *this;
  s.lambda = new_lambda;
  s.validate();
  return s;
}

void Spectrum::validate() const {
  require_same_size(alphas_sq.size(), as.size(), "Spectrum alphas_sq/as");
  require(!alphas_sq.empty(), "Spectrum: empty");
  require(alphas_sq.front() > 0.0, "Spectrum: alpha_1^2 must be positive");
  for (std::size_t i = 1; i < alphas_sq.size(); ++i) {
    require(alphas_sq[i] >= alphas_sq[i - 1], "Spectrum: alphas_sq must be non-decreasing");
  }
  for (double a : as) require(a >= 0.0 && std::isfinite(a), "Spectrum: a^i must be non-negative");
  require(lambda >= 0.0 && std::isfinite(lambda), "Spectrum: lambda must be non-negative");
  require(n_v >= 1, "Spectrum: n_v must be positive");
  require(n_z >= n_v, "Spectrum: n_z must be >= n_v");
  require(n_z <= alphas_sq.size(), "Spectrum: n_z exceeds the available spectrum");
}

json Spectrum::to_json() const {
  return json{{"alphas_sq", alphas_sq}, {"as", as},   {"lambda", lambda},
              {"n_v", n_v},             {"n_z", n_z}, {"basis_tag", basis_tag}};
}

Spectrum Spectrum::from_json(const json& j) {
  return create(j.at("alphas_sq").get<std::vector<double>>(), j.at("as").get<std::vector<double>>(),
                j.at("lambda").get<double>(), j.at("n_v").get<std::size_t>(),
                j.at("n_z").get<std::size_t>(), j.value("basis_tag", std::string(kAbstractTag)));
}

// ---------------------------------------------------------------------------
// Gamma weights

GammaWeights GammaWeights::create(std::vector<double> gammas) {
  for (std::size_t i = 0; i < gammas.size(); ++i) {
    require(gammas[i] >= 1.0, "GammaWeights: gamma_i must be >= 1");
    if (i > 0) require(gammas[i] >= gammas[i - 1], "GammaWeights: must be non-decreasing");
  }
  return GammaWeights{std::move(gammas)};
}

GammaWeights GammaWeights::power_law(const Spectrum& s, double theta) {
  require(theta >= 0.0, "GammaWeights: theta must be non-negative");
  std::vector<double> g(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) g[i] = std::pow(s.alphas_sq[i] / s.alphas_sq[0], theta);
  return create(std::move(g));
}

// ---------------------------------------------------------------------------
// Norms and projections

double h_norm(std::span<const double> x) noexcept {
  double scale = 0.0;
  for (double v : x) scale = std::max(scale, std::abs(v));
  if (scale == 0.0 || !std::isfinite(scale)) return scale;
  NeumaierSum s;
  for (double v : x) {
    const double r = v / scale;
    s.add(r * r);
  }
  return scale * std::sqrt(s.value());
}

double h_norm(const FieldCoefficients& x) { return h_norm(x.view()); }

double v_norm_sq(std::span<const double> x, const Spectrum& s) {
  require(x.size() <= s.size(), "v_norm_sq: field longer than spectrum");
  NeumaierSum acc;
  for (std::size_t i = 0; i < x.size(); ++i) acc.add(s.alphas_sq[i] * x[i] * x[i]);
  return acc.value();
}

double v_norm_sq(const FieldCoefficients& x, const Spectrum& s) {
  if (x.basis_tag != s.basis_tag) throw DimensionError("v_norm_sq: basis mismatch");
  return v_norm_sq(x.view(), s);
}

double trace_ratio(const Spectrum& s, std::size_t n) {
  require(n <= s.size(), "trace_ratio: n exceeds spectrum length");
  NeumaierSum acc;
  for (std::size_t i = 0; i < n; ++i) acc.add(s.as[i] / s.alphas_sq[i]);
  return acc.value();
}

double trace_tail(const Spectrum& s, std::size_t n) {
  NeumaierSum acc;
  for (std::size_t i = n; i < s.size(); ++i) acc.add(s.as[i] / s.alphas_sq[i]);
  return acc.value();
}

double ou_truncation_tail(const Spectrum& s, std::size_t n) {
  NeumaierSum acc;
  for (std::size_t i = n; i < s.size(); ++i) acc.add(s.as[i] / (2.0 * s.rate(i)));
  return acc.value();
}

double gamma_constant(const Spectrum& s, const GammaWeights& g, std::size_t n) {
  require(n <= s.size() && n <= g.gammas.size(), "gamma_constant: n too large");
  NeumaierSum acc;
  for (std::size_t i = 0; i < n; ++i) acc.add(g.gammas[i] * s.as[i] / s.alphas_sq[i]);
  return 0.5 * acc.value();
}

FieldCoefficients gamma_apply(const FieldCoefficients& x, const GammaWeights& g) {
  require_same_size(x.size(), g.gammas.size(), "gamma_apply");
  FieldCoefficients out = x;
  for (std::size_t i = 0; i < x.size(); ++i) out.coeffs[i] *= std::sqrt(g.gammas[i]);
  return out;
}

FieldCoefficients project_pi_n(const FieldCoefficients& x, std::size_t n) {
  require(n >= 1, "project_pi_n: n must be positive");
  require(n <= x.size(), "project_pi_n: n exceeds field length");
  return FieldCoefficients(std::vector<double>(x.coeffs.begin(), x.coeffs.begin() + n), x.basis_tag);
}

// ---------------------------------------------------------------------------
// Torus basis

namespace {

using Vec3 = std::array<double, 3>;

// Unit polarization vectors orthogonal to k.
std::vector<Vec3> polarizations(const std::array<int, 3>& k, int d) {
  std::vector<Vec3> out;
  double knorm = 0.0;
  for (int j = 0; j < d; ++j) knorm += static_cast<double>(k[j]) * k[j];
  knorm = std::sqrt(knorm);
  if (d == 2) {
    out.push_back({-k[1] / knorm, k[0] / knorm, 0.0});
    return out;
  }
  // Gram-Schmidt of the axes against k, carried out in integers so that k.c vanishes before normalization:
  // e_j |k|^2 - k k_j is the axis projection scaled by |k|^2, and k x c1 spans the remaining direction.
  const int k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
  std::array<long, 3> first{};
  int axis = 0;
  for (; axis < 3; ++axis) {
    for (int j = 0; j < 3; ++j) first[j] = (j == axis ? k2 : 0) - static_cast<long>(k[j]) * k[axis];
    if (first[0] != 0 || first[1] != 0 || first[2] != 0) break;
  }
  const std::array<long, 3> second = {k[1] * first[2] - k[2] * first[1], k[2] * first[0] - k[0] * first[2],
                                      k[0] * first[1] - k[1] * first[0]};
  auto unit = [](const std::array<long, 3>& v, double sign) {
    const double n = std::sqrt(static_cast<double>(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]));
    return Vec3{sign * v[0] / n, sign * v[1] / n, sign * v[2] / n};
  };
  out.push_back(unit(first, 1.0));
  // Orient the second vector along the next axis it touches, as Gram-Schmidt would.
  double sign = 1.0;
  for (int j = axis + 1; j < axis + 4; ++j) {
    if (second[j % 3] != 0) {
      sign = second[j % 3] > 0 ? 1.0 : -1.0;
      break;
    }
  }
  out.push_back(unit(second, sign));
  return out;
}

bool is_half_lattice(const std::array<int, 3>& k, int d) {
  for (int j = 0; j < d; ++j) {
    if (k[j] != 0) return k[j] > 0;
  }
  return false;
}

}  // namespace

TorusBasis TorusBasis::build(int d, double kmax, double nu) {
  require(d == 2 || d == 3, "build_torus_basis: d must be 2 or 3");
  require(kmax >= 1.0, "build_torus_basis: kmax must be >= 1");
  require(nu > 0.0, "build_torus_basis: nu must be positive");
  TorusBasis b;
  b.d_ = d;
  b.kmax_ = kmax;
  b.nu_ = nu;
  const int K = static_cast<int>(std::floor(kmax));
  const double kmax_sq = kmax * kmax;
  std::vector<std::array<int, 3>> reps;
  std::array<int, 3> k{};
  const int zlo = d == 3 ? -K : 0;
  const int zhi = d == 3 ? K : 0;
  for (k[0] = -K; k[0] <= K; ++k[0]) {
    for (k[1] = -K; k[1] <= K; ++k[1]) {
      for (k[2] = zlo; k[2] <= zhi; ++k[2]) {
        const int n2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        if (n2 == 0 || n2 > kmax_sq || !is_half_lattice(k, d)) continue;
        reps.push_back(k);
      }
    }
  }
  for (const auto& rep : reps) {
    const auto pols = polarizations(rep, d);
    const int n2 = rep[0] * rep[0] + rep[1] * rep[1] + rep[2] * rep[2];
    for (Parity parity : {Parity::Cos, Parity::Sin}) {
      for (std::size_t p = 0; p < pols.size(); ++p) {
        TorusMode m;
        m.k = rep;
        m.parity = parity;
        m.pol = static_cast<int>(p) + 1;
        m.c = pols[p];
        m.k_norm_sq = n2;
        m.eigenvalue = nu * n2;
        b.modes_.push_back(m);
      }
    }
  }
  std::sort(b.modes_.begin(), b.modes_.end(), [](const TorusMode& a, const TorusMode& c) {
    return std::tie(a.k_norm_sq, a.k, a.parity, a.pol) < std::tie(c.k_norm_sq, c.k, c.parity, c.pol);
  });
  return b;
}

double TorusBasis::amplitude() const noexcept {
  return std::sqrt(2.0 / std::pow(2.0 * std::numbers::pi, d_));
}

int TorusBasis::max_frequency(std::size_t n) const {
  require(n <= modes_.size(), "max_frequency: n exceeds basis size");
  int K = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (int j = 0; j < d_; ++j) K = std::max(K, std::abs(modes_[i].k[j]));
  }
  return K;
}

std::string TorusBasis::tag() const {
  std::ostringstream os;
  os.precision(17);
  os << "torus:d=" << d_ << ":kmax=" << kmax_ << ":nu=" << nu_;
  return os.str();
}

Spectrum TorusBasis::spectrum(double epsilon, double lambda, std::size_t n_v, std::size_t n_z) const {
  std::vector<double> alphas(modes_.size()), as(modes_.size());
  for (std::size_t i = 0; i < modes_.size(); ++i) {
    alphas[i] = modes_[i].eigenvalue;
    as[i] = std::pow(alphas[i], -epsilon / 2.0);
  }
  return Spectrum::create(std::move(alphas), std::move(as), lambda, n_v, n_z, tag());
}

void TorusBasis::evaluate_mode(std::size_t i, std::span<const double> xi, std::span<double> out) const {
  const auto& m = modes_.at(i);
  require(xi.size() == static_cast<std::size_t>(d_) && out.size() == xi.size(),
          "evaluate_mode: dimension mismatch");
  double phase = 0.0;
  for (int j = 0; j < d_; ++j) phase += m.k[j] * xi[j];
  const double s = amplitude() * (m.parity == Parity::Cos ? std::cos(phase) : std::sin(phase));
  for (int j = 0; j < d_; ++j) out[j] = s * m.c[j];
}

void TorusBasis::evaluate(std::span<const double> coeffs, std::span<const double> xi,
                          std::span<double> out) const {
  require(coeffs.size() <= modes_.size(), "evaluate: too many coefficients");
  std::fill(out.begin(), out.end(), 0.0);
  std::array<double, 3> tmp{};
  std::span<double> t(tmp.data(), static_cast<std::size_t>(d_));
  for (std::size_t i = 0; i < coeffs.size(); ++i) {
    evaluate_mode(i, xi, t);
    for (int j = 0; j < d_; ++j) out[j] += coeffs[i] * t[j];
  }
}

json TorusBasis::to_json() const {
  json modes = json::array();
  for (const auto& m : modes_) {
    modes.push_back({{"k", std::vector<int>(m.k.begin(), m.k.begin() + d_)},
                     {"parity", m.parity == Parity::Cos ? "cos" : "sin"},
                     {"pol", m.pol},
                     {"c", std::vector<double>(m.c.begin(), m.c.begin() + d_)},
                     {"eigenvalue", m.eigenvalue}});
  }
  return json{{"d", d_}, {"kmax", kmax_}, {"nu", nu_}, {"modes", modes}};
}

TorusBasis TorusBasis::from_json(const json& j) {
  TorusBasis b = build(j.at("d").get<int>(), j.at("kmax").get<double>(), j.at("nu").get<double>());
  if (j.contains("modes")) {
    const auto& modes = j.at("modes");
    require(modes.size() == b.size(), "TorusBasis::from_json: mode count disagrees with (d, kmax)");
    for (std::size_t i = 0; i < b.size(); ++i) {
      const auto k = modes[i].at("k").get<std::vector<int>>();
      for (int jx = 0; jx < b.d_; ++jx) {
        require(k.at(jx) == b.modes_[i].k[jx], "TorusBasis::from_json: mode ordering disagrees");
      }
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Grid tables

int TorusGrid::min_points(const TorusBasis& basis, std::size_t n_modes, int factors) {
  return factors * basis.max_frequency(n_modes) + 1;
}

TorusGrid::TorusGrid(const TorusBasis& basis, std::size_t n_modes, int points_per_axis)
    : d_(basis.dim()), n_axis_(points_per_axis), n_modes_(n_modes) {
  require(n_modes <= basis.size(), "TorusGrid: n_modes exceeds basis size");
  require(points_per_axis >= 1, "TorusGrid: need at least one point per axis");
  n_points_ = 1;
  for (int j = 0; j < d_; ++j) n_points_ *= static_cast<std::size_t>(n_axis_);
  const double h = 2.0 * std::numbers::pi / n_axis_;
  weight_ = std::pow(h, d_);
  modes_.assign(basis.modes().begin(), basis.modes().begin() + static_cast<std::ptrdiff_t>(n_modes));
  points_.resize(n_points_ * d_);
  for (std::size_t g = 0; g < n_points_; ++g) {
    std::size_t rem = g;
    for (int j = d_ - 1; j >= 0; --j) {
      points_[g * d_ + j] = h * static_cast<double>(rem % n_axis_);
      rem /= n_axis_;
    }
  }
  const double amp = basis.amplitude();
  phase_.resize(n_modes_ * n_points_);
  dphase_.resize(n_modes_ * n_points_);
  for (std::size_t i = 0; i < n_modes_; ++i) {
    const auto& m = modes_[i];
    for (std::size_t g = 0; g < n_points_; ++g) {
      // Integer phase index keeps the table exact-periodic.
      long idx = 0;
      for (int j = 0; j < d_; ++j) {
        const long coord = static_cast<long>(std::lround(points_[g * d_ + j] / h));
        idx += static_cast<long>(m.k[j]) * coord;
      }
      idx %= n_axis_;
      if (idx < 0) idx += n_axis_;
      const double theta = h * static_cast<double>(idx);
      const double c = std::cos(theta), s = std::sin(theta);
      phase_[i * n_points_ + g] = amp * (m.parity == Parity::Cos ? c : s);
      dphase_[i * n_points_ + g] = amp * (m.parity == Parity::Cos ? -s : c);
    }
  }
}

void TorusGrid::synthesize(std::span<const double> coeffs, std::span<double> u) const {
  require(coeffs.size() <= n_modes_, "TorusGrid::synthesize: too many coefficients");
  require(u.size() == static_cast<std::size_t>(d_) * n_points_, "TorusGrid::synthesize: bad output size");
  std::fill(u.begin(), u.end(), 0.0);
  const std::size_t G = n_points_;
  for (std::size_t i = 0; i < coeffs.size(); ++i) {
    const double x = coeffs[i];
    if (x == 0.0) continue;
    const double* ph = phase_.data() + i * G;
    for (int l = 0; l < d_; ++l) {
      const double a = x * modes_[i].c[l];
      if (a == 0.0) continue;
      double* ul = u.data() + l * G;
      for (std::size_t g = 0; g < G; ++g) ul[g] += a * ph[g];
    }
  }
}

void TorusGrid::synthesize_with_gradient(std::span<const double> coeffs, std::span<double> u,
                                         std::span<double> grad) const {
  synthesize(coeffs, u);
  require(grad.size() == static_cast<std::size_t>(d_ * d_) * n_points_,
          "TorusGrid::synthesize_with_gradient: bad gradient size");
  std::fill(grad.begin(), grad.end(), 0.0);
  const std::size_t G = n_points_;
  for (std::size_t i = 0; i < coeffs.size(); ++i) {
    const double x = coeffs[i];
    if (x == 0.0) continue;
    const double* dph = dphase_.data() + i * G;
    for (int j = 0; j < d_; ++j) {
      if (modes_[i].k[j] == 0) continue;
      for (int l = 0; l < d_; ++l) {
        const double a = x * modes_[i].k[j] * modes_[i].c[l];
        if (a == 0.0) continue;
        double* gl = grad.data() + (static_cast<std::size_t>(j) * d_ + l) * G;
        for (std::size_t g = 0; g < G; ++g) gl[g] += a * dph[g];
      }
    }
  }
}

void TorusGrid::project(std::span<const double> field, std::span<double> out) const {
  require(out.size() <= n_modes_, "TorusGrid::project: too many outputs");
  require(field.size() == static_cast<std::size_t>(d_) * n_points_, "TorusGrid::project: bad field size");
  const std::size_t G = n_points_;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double* ph = phase_.data() + i * G;
    double acc = 0.0;
    for (int l = 0; l < d_; ++l) {
      const double c = modes_[i].c[l];
      if (c == 0.0) continue;
      const double* fl = field.data() + l * G;
      double s = 0.0;
      for (std::size_t g = 0; g < G; ++g) s += fl[g] * ph[g];
      acc += c * s;
    }
    out[i] = weight_ * acc;
  }
}

double TorusGrid::sup_norm(std::span<const double> coeffs) const {
  thread_local std::vector<double> u;
  u.resize(static_cast<std::size_t>(d_) * n_points_);
  synthesize(coeffs, u);
  double best = 0.0;
  for (std::size_t g = 0; g < n_points_; ++g) {
    double s = 0.0;
    for (int l = 0; l < d_; ++l) {
      const double v = u[l * n_points_ + g];
      s += v * v;
    }
    best = std::max(best, s);
  }
  return std::sqrt(best);
}

double e_norm(const FieldCoefficients& x, const TorusBasis& basis, int grid) {
  if (x.basis_tag != basis.tag()) throw DimensionError("e_norm: basis mismatch");
  const int needed = TorusGrid::min_points(basis, x.size(), 2);
  if (grid == 0) grid = needed;
  if (grid < needed) {
    throw AliasingError("e_norm: grid of " + std::to_string(grid) + " points per axis is below " +
                        std::to_string(needed));
  }
  return TorusGrid(basis, x.size(), grid).sup_norm(x.view());
}

ENorm ENorm::hilbert() { return ENorm{}; }

ENorm ENorm::torus_sup(const TorusBasis& basis, std::size_t n_modes, int grid) {
  const int needed = TorusGrid::min_points(basis, n_modes, 2);
  if (grid == 0) grid = needed;
  if (grid < needed) throw AliasingError("ENorm: grid too coarse for the active modes");
  ENorm e;
  e.grid_ = std::make_shared<const TorusGrid>(basis, n_modes, grid);
  return e;
}

double ENorm::operator()(std::span<const double> coeffs) const {
  if (!grid_) return h_norm(coeffs);
  return grid_->sup_norm(coeffs);
}

}  // namespace fpelab
