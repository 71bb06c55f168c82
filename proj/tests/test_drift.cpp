#include <doctest.h>

#include <cmath>
#include <vector>

#include "fpelab/common.hpp"
#include "fpelab/drift.hpp"
#include "support.hpp"

using namespace fpelab;
using fpelab::testing::max_abs_diff;
using fpelab::testing::ns_bilinear_oracle;
using fpelab::testing::ns_f_oracle;
using fpelab::testing::random_vector;

TEST_CASE("ns eval_f matches the convolution oracle") {
  for (int d : {2, 3}) {
    const auto basis = TorusBasis::build(d, d == 2 ? 3.0 : 1.5);
    const std::size_t n = std::min<std::size_t>(basis.size(), 32);
    const NavierStokesDrift ns(basis, n);
    for (std::uint32_t trial = 0; trial < 3; ++trial) {
      const auto x = random_vector(100 + d, n, 1.0, trial);
      std::vector<double> f(n);
      ns.eval_f(x, 0.0, f);
      const auto oracle = ns_f_oracle(basis, x);
      double scale = 0.0;
      for (double v : oracle) scale = std::max(scale, std::abs(v));
      CHECK(scale > 1e-3);
      CHECK(max_abs_diff(f, oracle) < 1e-10 * std::max(1.0, scale));
    }
  }
}

TEST_CASE("ns two-mode field matches the oracle") {
  const auto basis = TorusBasis::build(2, 2.0);
  const std::size_t n = basis.size();
  const NavierStokesDrift ns(basis, n);
  std::vector<double> x(n, 0.0);
  x[0] = 1.0;   // k = (0,1)
  x[4] = 0.7;   // k = (1,1) family
  std::vector<double> f(n);
  ns.eval_f(x, 0.0, f);
  CHECK(max_abs_diff(f, ns_f_oracle(basis, x)) < 1e-12);
}

TEST_CASE("single mode is a steady state") {
  const auto basis = TorusBasis::build(3, 2.0);
  const NavierStokesDrift ns(basis, basis.size());
  std::vector<double> x(basis.size()), f(basis.size());
  for (std::size_t i = 0; i < basis.size(); ++i) {
    std::fill(x.begin(), x.end(), 0.0);
    x[i] = 1.3;
    ns.eval_f(x, 0.0, f);
    for (double v : f) CHECK(std::abs(v) < 1e-13);
    CHECK(ns_energy_null_check(ns, FieldCoefficients(x, basis.tag())) < 1e-13);
  }
}

TEST_CASE("ns bilinear map") {
  for (int d : {2, 3}) {
    const auto basis = TorusBasis::build(d, 2.0);
    const std::size_t n = basis.size();
    const NavierStokesDrift ns(basis, n);
    const auto x = random_vector(7, n, 1.0, 1);
    const auto y = random_vector(7, n, 1.0, 2);
    const auto w = random_vector(7, n, 1.0, 3);
    std::vector<double> b(n);
    ns.bilinear(x, y, b);
    CHECK(max_abs_diff(b, ns_bilinear_oracle(basis, x, y)) < 1e-10);

    std::vector<double> zero(n, 0.0);
    ns.bilinear(x, zero, b);
    for (double v : b) CHECK(v == 0.0);

    const double lhs = ns.trilinear(x, y, w);
    const double rhs = -ns.trilinear(x, w, y);
    CHECK(std::abs(lhs - rhs) < 1e-10 * (1.0 + std::abs(lhs)));

    const auto fx = FieldCoefficients(x, basis.tag());
    const auto fy = FieldCoefficients(y, basis.tag());
    // f^i(x) = -<B(x, e_i), x> = <B(x, x), e_i>.
    CHECK(max_abs_diff(ns_bilinear(ns, fx, fx).coeffs, ns.eval_f(fx, 0.0, n).coeffs) < 1e-10);
    CHECK_THROWS_AS(ns_bilinear(ns, fx, FieldCoefficients(y)), DimensionError);
  }
}

TEST_CASE("energy null on random 12-mode fields") {
  for (int d : {2, 3}) {
    const auto basis = TorusBasis::build(d, 2.0);
    const std::size_t n = 12;
    const NavierStokesDrift ns(basis, n);
    for (std::uint32_t trial = 0; trial < 10; ++trial) {
      const auto x = random_vector(55, n, 1.0, trial);
      const double norm = h_norm(x);
      CHECK(ns_energy_null_check(ns, FieldCoefficients(x, basis.tag())) < 1e-10 * norm * norm * norm);
    }
  }
}

TEST_CASE("doubling the quadrature grid leaves eval_f unchanged") {
  const auto basis = TorusBasis::build(2, 3.0);
  const std::size_t n = basis.size();
  const NavierStokesDrift coarse(basis, n);
  const NavierStokesDrift fine(basis, n, 2 * coarse.grid().points_per_axis());
  const auto x = random_vector(9, n);
  std::vector<double> a(n), b(n);
  coarse.eval_f(x, 0.0, a);
  fine.eval_f(x, 0.0, b);
  CHECK(max_abs_diff(a, b) < 1e-12);
  CHECK_THROWS_AS(NavierStokesDrift(basis, n, coarse.grid().points_per_axis() - 1), AliasingError);
}

TEST_CASE("linear growth drifts") {
  const auto th = LinearGrowthDrift::tanh(2.0);
  const std::vector<double> x{0.3, -1.2, 4.0};
  std::vector<double> f(3);
  th.eval_f(x, 0.0, f);
  for (std::size_t i = 0; i < 3; ++i) CHECK(f[i] == 2.0 * std::tanh(x[i]));
  CHECK(th.p0() == 1.0);
  CHECK(th.k0() == 2.0);

  const auto rep = growth_bound_check(th, 3, 10.0, 500, 1);
  CHECK(rep.max_constant <= 2.0);
  const auto sg = LinearGrowthDrift::sign(1.5, 4);
  const auto rep2 = growth_bound_check(sg, 4, 10.0, 500, 2);
  CHECK(rep2.max_constant <= 1.5);

  const ZeroDrift zero;
  const auto rz = growth_bound_check(zero, 3, 5.0, 50, 3);
  for (double c : rz.constants) CHECK(c == 0.0);
}

TEST_CASE("ns growth constants are stable in the radius") {
  const auto basis = TorusBasis::build(2, 2.0);
  const NavierStokesDrift ns(basis, basis.size());
  const auto r1 = growth_bound_check(ns, basis.size(), 10.0, 2000, 4);
  const auto r2 = growth_bound_check(ns, basis.size(), 20.0, 2000, 4);
  CHECK(std::isfinite(r1.max_constant));
  CHECK(r2.max_constant / r1.max_constant > 0.5);
  CHECK(r2.max_constant / r1.max_constant < 2.0);
}

TEST_CASE("coercivity margins") {
  const auto basis = TorusBasis::build(2, 2.0);
  const std::size_t n = basis.size();
  const auto s = basis.spectrum(0.5, 0.0, n, n);
  const auto enorm = ENorm::torus_sup(basis, n);
  const NavierStokesDrift ns(basis, n);

  const CoercivityConstants k{0.5, 3.0};
  std::vector<double> v(n, 0.0);
  const auto z = random_vector(2, n);
  const double ez = enorm(z);
  CHECK(coercivity_margin(ns, v, z, 0.0, s, enorm, k) == doctest::Approx(3.0 * std::pow(ez, 4.0) + 3.0));

  const AuditSampler pilot{11, n, n, 2.0, 2.0, 0};
  const double C = fit_coercivity_constant(ns, s, enorm, 0.5, pilot, 300);
  CHECK(C >= 0.0);
  const AuditSampler fresh{12, n, n, 2.0, 2.0, 0};
  const auto audit = coercivity_audit(ns, s, enorm, {0.5, C}, fresh, 1000);
  CHECK(audit.samples == 1000);
  CHECK(audit.violations == 0);

  const auto lin = LinearGrowthDrift::tanh(1.0);
  const auto sl = Spectrum::power_law(4, 2.0, 1.0, 0.0, 0.0, 4, 4);
  const auto eh = ENorm::hilbert();
  const AuditSampler lp{13, 4, 4, 3.0, 3.0, 0};
  const double Cl = fit_coercivity_constant(lin, sl, eh, 0.5, lp, 300);
  const auto la = coercivity_audit(lin, sl, eh, {0.5, Cl}, AuditSampler{14, 4, 4, 3.0, 3.0, 0}, 1000);
  CHECK(la.violations == 0);
}
