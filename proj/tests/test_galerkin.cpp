#include <doctest.h>

#include <cmath>
#include <vector>

#include "fpelab/common.hpp"
#include "fpelab/galerkin.hpp"
#include "support.hpp"

using namespace fpelab;
using fpelab::testing::random_vector;

namespace {

struct Fixed {
  std::vector<double> grid;
  std::vector<double> values;
  std::size_t n_z;
  double lambda;
  PathView view() const { return PathView{grid, values, n_z, lambda}; }
};

Fixed zero_path(std::size_t J, double T, std::size_t n_z, double lambda = 0.0) {
  Fixed f{std::vector<double>(J + 1), std::vector<double>((J + 1) * n_z, 0.0), n_z, lambda};
  for (std::size_t j = 0; j <= J; ++j) f.grid[j] = T * static_cast<double>(j) / static_cast<double>(J);
  return f;
}

double final_error(const Trajectory& a, const Trajectory& b) {
  double e = 0.0;
  const auto x = a.at(a.grid.size() - 1), y = b.at(b.grid.size() - 1);
  for (std::size_t i = 0; i < x.size(); ++i) e = std::max(e, std::abs(x[i] - y[i]));
  return e;
}

}  // namespace

TEST_CASE("linear decay is exact") {
  const auto s = Spectrum::power_law(5, 2.0, 1.0, 0.0, 0.0, 5, 5);
  const ZeroDrift zero;
  const auto path = zero_path(10, 1.0, 5);
  const std::vector<double> v0{1.0, -2.0, 0.5, 3.0, -1.0};
  SolverConfig cfg;
  cfg.n_v = 5;
  for (auto method : {SolverMethod::ExponentialEuler, SolverMethod::IntegratingFactorRK4}) {
    cfg.method = method;
    const auto tr = integrate_v(v0, path.view(), zero, s, cfg);
    for (std::size_t j = 0; j < path.grid.size(); ++j) {
      for (std::size_t i = 0; i < 5; ++i) {
        const double exact = std::exp(-s.alphas_sq[i] * path.grid[j]) * v0[i];
        CHECK(std::abs(tr.at(j)[i] - exact) < 1e-12);
      }
    }
  }
}

TEST_CASE("piecewise-constant noise matches variation of constants") {
  const double lambda = 3.0;
  const auto s = Spectrum::create({2.0}, {1.0}, lambda, 1, 1);
  const ZeroDrift zero;
  auto path = zero_path(20, 1.0, 1, lambda);
  for (std::size_t j = 0; j < path.values.size(); ++j) path.values[j] = std::sin(1.7 * j);
  SolverConfig cfg;
  cfg.lambda = lambda;
  cfg.dt_solver = 0.05 / 4.0;
  const std::vector<double> v0{0.4};
  const auto tr = integrate_v(v0, path.view(), zero, s, cfg);
  double v = 0.4;
  const double a = 2.0;
  for (std::size_t j = 0; j + 1 < path.grid.size(); ++j) {
    const double h = path.grid[j + 1] - path.grid[j];
    v = std::exp(-a * h) * v + lambda * path.values[j] * (1.0 - std::exp(-a * h)) / a;
    CHECK(std::abs(tr.at(j + 1)[0] - v) < 1e-12);
  }
}

TEST_CASE("navier-stokes refinement order on interacting modes") {
  const auto basis = TorusBasis::build(2, 2.0);
  const std::size_t n = basis.size();
  const NavierStokesDrift ns(basis, n);
  const auto s = basis.spectrum(0.5, 0.0, n, n);
  const auto path = zero_path(8, 0.5, n);
  const auto v0 = random_vector(8, n, 2.0);
  SolverConfig cfg;
  cfg.n_v = n;
  cfg.method = SolverMethod::IntegratingFactorRK4;
  cfg.dt_solver = 0.0625 / 256.0;
  const auto ref = integrate_v(v0, path.view(), ns, s, cfg);
  cfg.method = SolverMethod::ExponentialEuler;
  std::vector<double> errs;
  for (int sub : {4, 8, 16, 32}) {
    cfg.dt_solver = 0.0625 / sub;
    errs.push_back(final_error(integrate_v(v0, path.view(), ns, s, cfg), ref));
  }
  CHECK(errs[0] > 1e-8);
  const double order = std::log2(errs.front() / errs.back()) / 3.0;
  CHECK(order >= 0.9);
  CHECK(order <= 1.3);

  cfg.dt_solver = 0.0;
  cfg.adaptive = true;
  cfg.tolerance = 1e-7;
  const auto adapt = integrate_v(v0, path.view(), ns, s, cfg);
  CHECK(adapt.substeps > 8);
  CHECK(final_error(adapt, ref) < errs.back());
}

TEST_CASE("solver contract errors") {
  const auto s = Spectrum::power_law(3, 2.0, 1.0, 0.0, 1.0, 3, 3);
  const ZeroDrift zero;
  const auto path = zero_path(4, 1.0, 3, 1.0);
  const std::vector<double> v0{1.0, 1.0, 1.0};
  SolverConfig cfg;
  cfg.n_v = 3;
  cfg.lambda = 2.0;
  CHECK_THROWS_WITH_AS(integrate_v(v0, path.view(), zero, s, cfg), doctest::Contains("lambda mismatch"), Error);
  cfg.lambda = 1.0;
  cfg.dt_solver = 0.3;
  CHECK_THROWS(integrate_v(v0, path.view(), zero, s, cfg));

  const LinearGrowthDrift wild(
      [](std::span<const double> x, double, std::span<double> out) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1e3 * x[i];
      },
      1e3, "explosive");
  cfg.dt_solver = 0.0;
  cfg.blowup_ceiling = 1e6;
  try {
    integrate_v(v0, path.view(), wild, s, cfg);
    FAIL("expected blow-up");
  } catch (const BlowupError& e) {
    CHECK(e.time() > 0.0);
    CHECK(std::string(e.what()).find("blow-up") != std::string::npos);
  }
}

TEST_CASE("monitors in the linear case") {
  const auto s = Spectrum::power_law(3, 2.0, 1.0, 0.0, 0.0, 3, 3);
  const ZeroDrift zero;
  const auto path = zero_path(50, 1.0, 3);
  const std::vector<double> v0{1.0, -0.5, 0.25};
  SolverConfig cfg;
  cfg.n_v = 3;
  const auto tr = integrate_v(v0, path.view(), zero, s, cfg);
  const auto eh = ENorm::hilbert();

  const auto margins = energy_inequality_monitor(tr, path.view(), eh, {0.0, 0.0, 2.0});
  CHECK(margins.violations == 0);
  CHECK(margins.min_margin >= 0.0);

  const auto env = gronwall_envelope(tr, path.view(), eh, 1.0, {0.0, 0.0, 2.0});
  CHECK(env.dominated);
  CHECK(env.values[0] == doctest::Approx(h_norm(v0)));

  std::vector<double> big(v0);
  for (double& v : big) v *= 10.0;
  const auto tr10 = integrate_v(big, path.view(), zero, s, cfg);
  const auto env10 = gronwall_envelope(tr10, path.view(), eh, 1.0, {0.0, 0.0, 2.0});
  CHECK(env10.dominated);
  CHECK(env10.values.back() == doctest::Approx(10.0 * env.values.back()));

  // int ||V||_V^2 = sum v0_i^2 (1 - e^{-2 alpha_i^2 T}) / 2 up to trapezoid error.
  double closed = 0.0;
  for (std::size_t i = 0; i < 3; ++i) closed += v0[i] * v0[i] * (1.0 - std::exp(-2.0 * s.alphas_sq[i])) / 2.0;
  const double margin0 = vnorm_budget_check(tr, path.view(), eh, 0.0, 2.0);
  CHECK(-margin0 == doctest::Approx(closed).epsilon(0.02));
  const double C = vnorm_budget_constant_needed(tr, path.view(), eh, 2.0);
  CHECK(vnorm_budget_check(tr, path.view(), eh, C, 2.0) >= -1e-12);

  const std::vector<double> zeros(3, 0.0);
  const auto still = integrate_v(zeros, path.view(), zero, s, cfg);
  CHECK(vnorm_budget_check(still, path.view(), eh, 0.7, 2.0) == doctest::Approx(0.7));
}

TEST_CASE("fitted energy constant makes the envelope dominate") {
  const auto basis = TorusBasis::build(2, 2.0);
  const std::size_t n = basis.size();
  const auto ns = std::make_shared<NavierStokesDrift>(basis, n);
  OUParams p;
  p.spectrum = basis.spectrum(0.5, 5.0, n, n);
  p.T = 0.5;
  p.dt = 0.01;
  p.seed = 77;
  p.M = 6;
  const auto noise = sample_ensemble(p, 1);
  const auto enorm = ENorm::torus_sup(basis, n);
  SolverConfig cfg;
  cfg.n_v = n;
  cfg.lambda = 5.0;
  const auto v0 = random_vector(4, n, 1.0);
  double C = 0.0;
  std::vector<Trajectory> trs;
  for (std::size_t m = 0; m < p.M; ++m) {
    trs.push_back(integrate_v(v0, PathView::of(noise, m), *ns, p.spectrum, cfg));
    C = std::max(C, energy_constant_needed(trs.back(), PathView::of(noise, m), enorm, 5.0, 4.0));
  }
  const EnergyConstants k{C, 5.0, 4.0};
  for (std::size_t m = 0; m < p.M; ++m) {
    const auto mon = energy_inequality_monitor(trs[m], PathView::of(noise, m), enorm, k, 1e-9);
    CHECK(mon.violations == 0);
    CHECK(gronwall_envelope(trs[m], PathView::of(noise, m), enorm, C, k).dominated);
  }
}

TEST_CASE("moment scan") {
  const auto s = Spectrum::power_law(4, 2.0, 0.0, 0.0, 0.0, 4, 4);
  OUParams p;
  p.spectrum = s;
  p.T = 0.5;
  p.dt = 0.05;
  p.M = 20;
  const auto noise = sample_ensemble(p, 1);
  const ZeroDrift zero;
  const std::vector<std::size_t> ns{2, 4};
  const std::vector<double> ps{2.5, 3.0};
  SolverConfig cfg;
  const auto scan = moment_scan(ns, ps, noise, zero, s, cfg, [](std::size_t, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
  });
  for (const auto& r : scan.rows) {
    CHECK(r.estimate == 0.0);
    CHECK(r.blowups == 0);
  }

  auto q = p;
  q.spectrum = Spectrum::power_law(4, 2.0, 1.0, 0.0, 0.0, 4, 4);
  q.M = 200;
  const auto noisy = sample_ensemble(q, 1);
  const auto scan2 = moment_scan(ns, ps, noisy, zero, q.spectrum, cfg, [](std::size_t m, std::span<double> out) {
    const auto v = random_vector(m, out.size(), 1.0, 9);
    std::copy(v.begin(), v.end(), out.begin());
  });
  // Lyapunov: E[X^p]^{1/p} is non-decreasing in p.
  for (std::size_t k = 0; k < ns.size(); ++k) CHECK(scan2.rows[k + ns.size()].normalized >= scan2.rows[k].normalized);
}

TEST_CASE("trajectories are deterministic") {
  const auto basis = TorusBasis::build(2, 2.0);
  const std::size_t n = basis.size();
  const NavierStokesDrift ns(basis, n);
  OUParams p;
  p.spectrum = basis.spectrum(0.5, 0.0, n, n);
  p.T = 0.2;
  p.dt = 0.02;
  p.M = 2;
  const auto a = sample_ensemble(p, 1), b = sample_ensemble(p, 2);
  SolverConfig cfg;
  cfg.n_v = n;
  const auto v0 = random_vector(1, n);
  const auto ta = integrate_v(v0, PathView::of(a, 1), ns, p.spectrum, cfg);
  const auto tb = integrate_v(v0, PathView::of(b, 1), ns, p.spectrum, cfg);
  CHECK(ta.V == tb.V);
  CHECK(trajectory_diagnostics(ta).dump() == trajectory_diagnostics(tb).dump());
}
