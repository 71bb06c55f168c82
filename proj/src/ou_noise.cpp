#include "fpelab/ou_noise.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>

#include "fpelab/common.hpp"
#include "fpelab/rng.hpp"
#include "fpelab/stats.hpp"

namespace fpelab {

// ---------------------------------------------------------------------------
// Parameters and ensemble

std::size_t OUParams::steps() const {
  const double ratio = T / dt;
  return static_cast<std::size_t>(std::floor(ratio + 1e-9 * std::max(1.0, ratio)));
}

std::vector<double> OUParams::grid() const {
  const std::size_t J = steps();
  std::vector<double> g(J + 1);
  for (std::size_t j = 0; j <= J; ++j) g[j] = static_cast<double>(j) * dt;
  // Snap the last point onto T when dt divides T up to rounding.
  if (std::abs(g[J] - T) <= 1e-9 * T) g[J] = T;
  return g;
}

void OUParams::validate() const {
  spectrum.validate();
  require(T > 0.0 && std::isfinite(T), "OUParams: T must be positive");
  require(dt > 0.0 && dt <= T, "OUParams: dt must be in (0, T]");
  require(M >= 1, "OUParams: M must be >= 1");
}

OUParams OUParams::with_lambda(double lambda) const {
  OUParams p = *this;
  p.spectrum = spectrum.with_lambda(lambda);
  return p;
}

OUPathEnsemble::OUPathEnsemble(OUParams params, std::vector<double> values)
    : params_(std::move(params)), grid_(params_.grid()), values_(std::move(values)) {
  require_same_size(values_.size(), params_.M * grid_.size() * params_.spectrum.n_z, "OUPathEnsemble");
}

std::span<const double> OUPathEnsemble::path(std::size_t m) const {
  const std::size_t stride = times() * modes();
  require(m < paths(), "OUPathEnsemble::path: index out of range");
  return {values_.data() + m * stride, stride};
}

std::span<const double> OUPathEnsemble::at(std::size_t m, std::size_t j) const {
  require(j < times(), "OUPathEnsemble::at: time index out of range");
  return path(m).subspan(j * modes(), modes());
}

// ---------------------------------------------------------------------------
// Exact transition

namespace {

double step_sigma(std::size_t i, double dt, const Spectrum& s) {
  const double a = s.as[i];
  if (a == 0.0) return 0.0;
  const double c = s.rate(i);
  // -expm1 keeps precision for small c*dt.
  return std::sqrt(a * (-std::expm1(-2.0 * c * dt)) / (2.0 * c));
}

}  // namespace

double ou_exact_step(double z, std::size_t i, double dt, const Spectrum& s, double noise) {
  require(dt > 0.0, "ou_exact_step: dt must be positive");
  require(i < s.size(), "ou_exact_step: mode out of range");
  return std::exp(-s.rate(i) * dt) * z + step_sigma(i, dt, s) * noise;
}

double mode_variance(std::size_t i, double t, const Spectrum& s) {
  require(t >= 0.0, "mode_variance: t must be non-negative");
  require(i < s.size(), "mode_variance: mode out of range");
  const double c = s.rate(i);
  return s.as[i] * (-std::expm1(-2.0 * t * c)) / (2.0 * c);
}

void sample_path(const OUParams& p, std::size_t m, std::span<double> out) {
  const std::size_t J = p.steps();
  const std::size_t n = p.spectrum.n_z;
  require_same_size(out.size(), (J + 1) * n, "sample_path");
  const KeyedRng rng(p.seed);
  std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(n), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double decay = std::exp(-p.spectrum.rate(i) * p.dt);
    const double sigma = step_sigma(i, p.dt, p.spectrum);
    double z = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
      if (sigma != 0.0) {
        z = decay * z + sigma * rng.normal(Stream::OuNoise, m, static_cast<std::uint32_t>(i),
                                           static_cast<std::uint32_t>(j));
      } else {
        z = decay * z;
      }
      out[(j + 1) * n + i] = z;
    }
  }
}

OUPathEnsemble sample_ensemble(const OUParams& p, int threads) {
  p.validate();
  const std::size_t stride = (p.steps() + 1) * p.spectrum.n_z;
  std::vector<double> values;
  try {
    values.assign(p.M * stride, 0.0);
  } catch (const std::bad_alloc&) {
    throw Error("sample_ensemble: cannot allocate " + std::to_string(p.M * stride) + " doubles");
  }
  parallel_for(p.M, threads, [&](std::size_t m) {
    sample_path(p, m, std::span<double>(values.data() + m * stride, stride));
  });
  return OUPathEnsemble(p, std::move(values));
}

// ---------------------------------------------------------------------------
// Path functionals

std::vector<double> e_norm_series(std::span<const double> path, std::size_t n_z, const ENorm& enorm) {
  require(n_z > 0 && path.size() % n_z == 0, "e_norm_series: path size is not a multiple of n_z");
  const std::size_t times = path.size() / n_z;
  std::vector<double> out(times);
  for (std::size_t j = 0; j < times; ++j) out[j] = enorm(path.subspan(j * n_z, n_z));
  return out;
}

double l2E_norm_path(std::span<const double> path, std::span<const double> grid, std::size_t n_z,
                     const ENorm& enorm, double power) {
  require_same_size(path.size(), grid.size() * n_z, "l2E_norm_path");
  const auto norms = e_norm_series(path, n_z, enorm);
  NeumaierSum acc;
  for (std::size_t j = 0; j + 1 < grid.size(); ++j) {
    const double h = grid[j + 1] - grid[j];
    acc.add(0.5 * h * (std::pow(norms[j], power) + std::pow(norms[j + 1], power)));
  }
  return acc.value();
}

std::vector<double> path_energy_integrals(const OUParams& p, const ENorm& enorm, int threads) {
  p.validate();
  const auto grid = p.grid();
  const std::size_t stride = grid.size() * p.spectrum.n_z;
  std::vector<double> out(p.M);
  parallel_for(p.M, threads, [&](std::size_t m) {
    thread_local std::vector<double> buf;
    buf.resize(stride);
    sample_path(p, m, buf);
    out[m] = l2E_norm_path(buf, grid, p.spectrum.n_z, enorm, 2.0);
  });
  return out;
}

std::vector<ProbeResult> assumption4_probe(std::span<const double> lambdas, double r, const OUParams& base,
                                           const ENorm& enorm, int threads) {
  require(r > 0.0, "assumption4_probe: r must be positive");
  std::vector<ProbeResult> out;
  for (double lambda : lambdas) {
    const OUParams p = base.with_lambda(lambda);
    const auto integrals = path_energy_integrals(p, enorm, threads);
    std::size_t exceed = 0;
    for (double v : integrals) exceed += v > r * r ? 1 : 0;
    ProbeResult res;
    res.lambda = lambda;
    res.probability = static_cast<double>(exceed) / static_cast<double>(p.M);
    const auto ci = stats::wilson(exceed, p.M);
    res.lo = ci.lo;
    res.hi = ci.hi;
    NeumaierSum sum;
    for (std::size_t i = 0; i < p.spectrum.n_z; ++i) sum.add(p.spectrum.as[i] / p.spectrum.rate(i));
    res.chebyshev_bound = 0.5 * p.T * sum.value() / (r * r);
    out.push_back(res);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fernique

double fernique_bound() {
  const double e2 = std::exp(2.0);
  return std::exp(0.25) + e2 / (e2 - 1.0);
}

double calibration_threshold() { return 1.0 / (std::exp(-1.5) + 1.0); }

FerniqueResult fernique_from_integrals(double K, std::span<const double> integrals, double tail_fraction) {
  require(K >= 0.0, "fernique_estimate: K must be non-negative");
  require(!integrals.empty(), "fernique_estimate: no samples");
  FerniqueResult res;
  double xmax = -std::numeric_limits<double>::infinity();
  for (double v : integrals) xmax = std::max(xmax, K * v);
  if (!std::isfinite(xmax)) {
    res.status = FerniqueStatus::Divergent;
    res.estimate = std::numeric_limits<double>::infinity();
    return res;
  }
  NeumaierSum s1, s2;
  for (double v : integrals) {
    const double w = std::exp(K * v - xmax);
    s1.add(w);
    s2.add(w * w);
  }
  const double n = static_cast<double>(integrals.size());
  const double mean_scaled = s1.value() / n;
  const double var_scaled =
      integrals.size() > 1 ? std::max(0.0, (s2.value() - n * mean_scaled * mean_scaled) / (n - 1.0)) : 0.0;
  res.log_estimate = xmax + std::log(mean_scaled);
  res.max_share = 1.0 / s1.value();
  if (res.log_estimate > std::log(std::numeric_limits<double>::max())) {
    res.status = FerniqueStatus::Divergent;
    res.estimate = std::numeric_limits<double>::infinity();
    res.std_error = std::numeric_limits<double>::infinity();
    return res;
  }
  res.estimate = std::exp(res.log_estimate);
  res.std_error = std::exp(xmax) * std::sqrt(var_scaled / n);
  if (integrals.size() > 1 && res.max_share > tail_fraction) res.status = FerniqueStatus::TailDominated;
  return res;
}

FerniqueResult fernique_estimate(double K, double lambda, const OUParams& p, const ENorm& enorm,
                                 double tail_fraction, int threads) {
  require(K >= 0.0, "fernique_estimate: K must be non-negative");
  const auto integrals = path_energy_integrals(p.with_lambda(lambda), enorm, threads);
  return fernique_from_integrals(K, integrals, tail_fraction);
}

CalibrationResult calibrate_lambda(double K, const OUParams& p, std::span<const double> lambda_grid,
                                   const ENorm& enorm, NoiseEvent event, int threads) {
  require(K > 0.0, "calibrate_lambda: K must be positive");
  require(!lambda_grid.empty(), "calibrate_lambda: empty lambda grid");
  for (std::size_t i = 1; i < lambda_grid.size(); ++i) {
    require(lambda_grid[i] > lambda_grid[i - 1], "calibrate_lambda: lambda grid must be increasing");
  }
  CalibrationResult res;
  res.r = 1.0 / (8.0 * std::sqrt(K));
  res.threshold = calibration_threshold();
  const double cutoff = event == NoiseEvent::L2NormBelowR ? res.r * res.r : res.r;
  for (std::size_t idx = 0; idx < lambda_grid.size(); ++idx) {
    const auto integrals = path_energy_integrals(p.with_lambda(lambda_grid[idx]), enorm, threads);
    std::size_t inside = 0;
    for (double v : integrals) inside += v <= cutoff ? 1 : 0;
    const double prob = static_cast<double>(inside) / static_cast<double>(integrals.size());
    const auto ci = stats::wilson(inside, integrals.size());
    res.trace.push_back({lambda_grid[idx], prob, ci.lo});
    if (ci.lo >= res.threshold) {
      res.lambda0 = lambda_grid[idx];
      res.grid_index = idx;
      res.probability = prob;
      res.lower_bound = ci.lo;
      return res;
    }
  }
  throw CalibrationError("calibration failed on grid: no lambda up to " + std::to_string(lambda_grid.back()) +
                         " reaches P >= " + std::to_string(res.threshold));
}

// ---------------------------------------------------------------------------
// Coupled Z^0 / Z^lambda

void sample_coupled_path(const OUParams& p, double lambda, std::size_t m, std::span<double> z0,
                         std::span<double> zl) {
  const Spectrum& s = p.spectrum;
  const std::size_t J = p.steps();
  const std::size_t n = s.n_z;
  require_same_size(z0.size(), (J + 1) * n, "sample_coupled_path z0");
  require_same_size(zl.size(), (J + 1) * n, "sample_coupled_path zl");
  const KeyedRng rng(p.seed);
  const double h = p.dt;
  for (std::size_t i = 0; i < n; ++i) {
    z0[i] = 0.0;
    zl[i] = 0.0;
    const double a = s.as[i];
    const double c0 = s.alphas_sq[i];
    const double c1 = c0 + lambda;
    const double d0 = std::exp(-c0 * h);
    const double d1 = std::exp(-c1 * h);
    const double v0 = a * (-std::expm1(-2.0 * c0 * h)) / (2.0 * c0);
    const double v1 = a * (-std::expm1(-2.0 * c1 * h)) / (2.0 * c1);
    const double cov = a * (-std::expm1(-(c0 + c1) * h)) / (c0 + c1);
    const double l11 = std::sqrt(v0);
    const double l21 = l11 > 0.0 ? cov / l11 : 0.0;
    const double l22 = std::sqrt(std::max(0.0, v1 - l21 * l21));
    double x0 = 0.0, xl = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
      const auto [g1, g2] = rng.normal_pair(Stream::OuCoupled, m, static_cast<std::uint32_t>(i),
                                            static_cast<std::uint32_t>(j));
      x0 = d0 * x0 + l11 * g1;
      xl = lambda == 0.0 ? x0 : d1 * xl + l21 * g1 + l22 * g2;
      z0[(j + 1) * n + i] = x0;
      zl[(j + 1) * n + i] = xl;
    }
  }
}

std::vector<double> exponential_convolution(std::span<const double> y, double rate, double lambda, double h) {
  std::vector<double> out(y.size(), 0.0);
  const double decay = std::exp(-rate * h);
  double acc = 0.0;
  for (std::size_t j = 0; j + 1 < y.size(); ++j) {
    acc = decay * acc + 0.5 * h * (decay * y[j] + y[j + 1]);
    out[j + 1] = lambda * acc;
  }
  return out;
}

R0Result r0_identity_residual(double lambda, const OUParams& p, std::size_t stride, int threads) {
  p.validate();
  require(lambda >= 0.0, "r0_identity_residual: lambda must be non-negative");
  require(stride >= 1, "r0_identity_residual: stride must be >= 1");
  const std::size_t J = p.steps();
  require(J % stride == 0, "r0_identity_residual: stride must divide the number of steps");
  const std::size_t n = p.spectrum.n_z;
  const std::size_t Jc = J / stride;
  const double h = p.dt * static_cast<double>(stride);
  std::vector<double> sups(p.M);
  parallel_for(p.M, threads, [&](std::size_t m) {
    std::vector<double> z0((J + 1) * n), zl((J + 1) * n);
    sample_coupled_path(p, lambda, m, z0, zl);
    std::vector<double> diff_sq(Jc + 1, 0.0);
    std::vector<double> y(Jc + 1);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j <= Jc; ++j) y[j] = z0[j * stride * n + i];
      const auto conv = exponential_convolution(y, p.spectrum.alphas_sq[i] + lambda, lambda, h);
      for (std::size_t j = 0; j <= Jc; ++j) {
        const double d = zl[j * stride * n + i] - (y[j] - conv[j]);
        diff_sq[j] += d * d;
      }
    }
    double sup = 0.0;
    for (double v : diff_sq) sup = std::max(sup, std::sqrt(v));
    sups[m] = sup;
  });
  R0Result res;
  res.dt = h;
  res.mean_sup = compensated_sum(sups) / static_cast<double>(p.M);
  res.max_sup = *std::max_element(sups.begin(), sups.end());
  return res;
}

// ---------------------------------------------------------------------------
// Hoelder probe

double holder_c1(const TorusBasis& basis, const Spectrum& s, double epsilon, double lambda, std::size_t n) {
  require(n <= s.size(), "holder_c1: n exceeds spectrum");
  const double A = basis.amplitude();
  const double q = epsilon / 4.0;
  const double prefactor = 2.0 * A * A * std::pow(2.0, -q) * std::pow(basis.nu(), -q / 2.0);
  NeumaierSum acc;
  for (std::size_t i = 0; i < n; ++i) {
    const double alpha = std::sqrt(s.alphas_sq[i]);
    acc.add(s.as[i] * std::pow(alpha, q) / (s.alphas_sq[i] + lambda));
  }
  return prefactor * acc.value();
}

HolderReport holder_probe(const TorusBasis& basis, double epsilon, double lambda, double t,
                          std::span<const std::array<std::array<double, 3>, 2>> pairs, const OUParams& base,
                          int threads) {
  require(epsilon > 0.0, "holder_probe: epsilon must be positive");
  require(!pairs.empty(), "holder_probe: no point pairs");
  const OUParams p = base.with_lambda(lambda);
  p.validate();
  const auto grid = p.grid();
  const auto j = static_cast<std::size_t>(std::lround(t / p.dt));
  require(j < grid.size(), "holder_probe: t beyond the horizon");
  const std::size_t n = p.spectrum.n_z;
  const int d = basis.dim();
  const std::size_t P = pairs.size();

  // diffs[(q*n + i)*d + l] = e_{i,l}(xi) - e_{i,l}(xi') for pair q.
  std::vector<double> diffs(P * n * d);
  std::vector<double> dist(P);
  for (std::size_t q = 0; q < P; ++q) {
    double d2 = 0.0;
    for (int l = 0; l < d; ++l) {
      const double dx = pairs[q][0][l] - pairs[q][1][l];
      d2 += dx * dx;
    }
    dist[q] = std::sqrt(d2);
    std::array<double, 3> ea{}, eb{};
    for (std::size_t i = 0; i < n; ++i) {
      basis.evaluate_mode(i, std::span<const double>(pairs[q][0].data(), d), std::span<double>(ea.data(), d));
      basis.evaluate_mode(i, std::span<const double>(pairs[q][1].data(), d), std::span<double>(eb.data(), d));
      for (int l = 0; l < d; ++l) diffs[(q * n + i) * d + l] = ea[l] - eb[l];
    }
  }

  std::vector<double> sq(p.M * P);
  const std::size_t stride = grid.size() * n;
  parallel_for(p.M, threads, [&](std::size_t m) {
    thread_local std::vector<double> buf;
    buf.resize(stride);
    sample_path(p, m, buf);
    const double* z = buf.data() + j * n;
    for (std::size_t q = 0; q < P; ++q) {
      double s = 0.0;
      for (int l = 0; l < d; ++l) {
        double inc = 0.0;
        for (std::size_t i = 0; i < n; ++i) inc += z[i] * diffs[(q * n + i) * d + l];
        s += inc * inc;
      }
      sq[m * P + q] = s;
    }
  });

  HolderReport rep;
  rep.target_exponent = epsilon / 4.0;
  rep.distances = dist;
  rep.mean_sq_increments.resize(P);
  rep.increment_std_errors.resize(P);
  std::vector<double> col(p.M);
  std::vector<double> lx, ly;
  for (std::size_t q = 0; q < P; ++q) {
    for (std::size_t m = 0; m < p.M; ++m) col[m] = sq[m * P + q];
    const auto est = stats::mean_with_error(col);
    rep.mean_sq_increments[q] = est.mean;
    rep.increment_std_errors[q] = est.std_error;
    if (dist[q] > 0.0 && est.mean > 0.0) {
      lx.push_back(std::log(dist[q]));
      ly.push_back(std::log(est.mean));
      rep.fitted_constant = std::max(rep.fitted_constant, est.mean / std::pow(dist[q], rep.target_exponent));
    }
  }
  if (lx.size() >= 2) {
    const auto fit = stats::ols(lx, ly);
    rep.fitted_exponent = fit.slope;
    rep.exponent_se = fit.slope_se;
  }
  rep.c1_closed_form = holder_c1(basis, p.spectrum, epsilon, lambda, n);
  const double A = basis.amplitude();
  rep.c1_prefactor = 2.0 * A * A * std::pow(2.0, -rep.target_exponent) *
                     std::pow(basis.nu(), -rep.target_exponent / 2.0);
  return rep;
}

// ---------------------------------------------------------------------------
// Diagnostics and IO

std::vector<ModeMomentRow> ou_moment_table(const OUPathEnsemble& e, std::size_t j) {
  require(j < e.times(), "ou_moment_table: time index out of range");
  std::vector<ModeMomentRow> rows;
  std::vector<double> col(e.paths());
  for (std::size_t i = 0; i < e.modes(); ++i) {
    for (std::size_t m = 0; m < e.paths(); ++m) col[m] = e.at(m, j)[i];
    const auto mom = stats::moments(col);
    ModeMomentRow r;
    r.mode = i;
    r.t = e.grid()[j];
    r.mean = mom.mean;
    r.variance = mom.variance;
    r.expected_variance = mode_variance(i, r.t, e.params().spectrum);
    r.skewness = mom.skewness;
    r.excess_kurtosis = mom.excess_kurtosis;
    rows.push_back(r);
  }
  return rows;
}

namespace {

constexpr char kMagic[8] = {'F', 'P', 'E', 'L', 'A', 'B', '0', '1'};

void put_u64_le(std::ofstream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>((v >> (8 * k)) & 0xFFu);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64_le(std::ifstream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(b[k]) << (8 * k);
  return v;
}

}  // namespace

void write_array_binary(const std::string& path, const nlohmann::json& header, std::span<const double> data) {
  static_assert(std::endian::native == std::endian::little, "binary export assumes a little-endian host");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path + " for writing");
  const std::string h = header.dump();
  os.write(kMagic, sizeof(kMagic));
  put_u64_le(os, h.size());
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
  if (!os) throw Error("write failed for " + path);
}

std::vector<double> read_array_binary(const std::string& path, nlohmann::json& header) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) throw Error(path + ": not an FPELAB01 array file");
  const std::uint64_t hl = get_u64_le(is);
  std::string h(hl, '\0');
  is.read(h.data(), static_cast<std::streamsize>(hl));
  header = nlohmann::json::parse(h);
  std::vector<double> data;
  const auto count = header.at("count").get<std::size_t>();
  data.resize(count);
  is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!is) throw Error(path + ": truncated array payload");
  return data;
}

nlohmann::json ensemble_header(const OUPathEnsemble& e) {
  const auto& p = e.params();
  return nlohmann::json{{"kind", "ou_ensemble"},
                        {"shape", {e.paths(), e.times(), e.modes()}},
                        {"count", e.values().size()},
                        {"T", p.T},
                        {"dt", p.dt},
                        {"seed", p.seed},
                        {"lambda", p.spectrum.lambda},
                        {"basis_tag", p.spectrum.basis_tag}};
}

}  // namespace fpelab
