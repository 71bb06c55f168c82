#pragma once

// Shared helpers and independent oracles for the test binaries.

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <vector>

#include "fpelab/rng.hpp"
#include "fpelab/spectrum.hpp"

namespace fpelab::testing {

inline std::vector<double> random_vector(std::uint64_t seed, std::size_t n, double scale = 1.0,
                                         std::uint32_t salt = 0) {
  const KeyedRng rng(seed);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = scale * rng.normal(Stream::TestSuite, salt, static_cast<std::uint32_t>(i), 7);
  return x;
}

/// Exponential expansion coefficients of a real trig factor:
/// cos(theta) = 1/2 e^{i theta} + 1/2 e^{-i theta}, sin(theta) = -i/2 e^{i theta} + i/2 e^{-i theta}.
inline std::array<std::complex<double>, 2> trig_coeffs(Parity parity, bool derivative) {
  using C = std::complex<double>;
  const C half(0.5, 0.0), mi(0.0, -0.5), pi(0.0, 0.5);
  // d/dtheta cos = -sin, d/dtheta sin = cos.
  if (!derivative) return parity == Parity::Cos ? std::array<C, 2>{half, half} : std::array<C, 2>{mi, pi};
  return parity == Parity::Cos ? std::array<C, 2>{-mi, -pi} : std::array<C, 2>{half, half};
}

/// int_{[0,2pi]^d} (e_a . grad) e_b . e_c computed from the Fourier expansion, no grid involved.
inline double triple_integral(const TorusBasis& basis, std::size_t a, std::size_t b, std::size_t c) {
  const int d = basis.dim();
  const auto& ma = basis.mode(a);
  const auto& mb = basis.mode(b);
  const auto& mc = basis.mode(c);
  double ca_kb = 0.0, cb_cc = 0.0;
  for (int l = 0; l < d; ++l) {
    ca_kb += ma.c[l] * mb.k[l];
    cb_cc += mb.c[l] * mc.c[l];
  }
  if (ca_kb == 0.0 || cb_cc == 0.0) return 0.0;
  const auto fa = trig_coeffs(ma.parity, false);
  const auto fb = trig_coeffs(mb.parity, true);
  const auto fc = trig_coeffs(mc.parity, false);
  std::complex<double> acc(0.0, 0.0);
  for (int sa = 0; sa < 2; ++sa) {
    for (int sb = 0; sb < 2; ++sb) {
      for (int sc = 0; sc < 2; ++sc) {
        const int ga = sa == 0 ? 1 : -1, gb = sb == 0 ? 1 : -1, gc = sc == 0 ? 1 : -1;
        bool zero = true;
        for (int l = 0; l < d; ++l) zero = zero && (ga * ma.k[l] + gb * mb.k[l] + gc * mc.k[l] == 0);
        if (zero) acc += fa[sa] * fb[sb] * fc[sc];
      }
    }
  }
  const double A = basis.amplitude();
  const double vol = std::pow(2.0 * std::numbers::pi, d);
  return A * A * A * ca_kb * cb_cc * vol * acc.real();
}

/// f^i(x) = sum_{j,l} x_j x_l int (e_j . grad) e_i . e_l by brute-force O(n^3) summation.
inline std::vector<double> ns_f_oracle(const TorusBasis& basis, const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<double> f(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t l = 0; l < n; ++l) f[i] += x[j] * x[l] * triple_integral(basis, j, i, l);
    }
  }
  return f;
}

/// <B(x,y), e_i> = -sum_{j,l} x_j y_l int (e_j . grad) e_l . e_i.
inline std::vector<double> ns_bilinear_oracle(const TorusBasis& basis, const std::vector<double>& x,
                                              const std::vector<double>& y) {
  const std::size_t n = x.size();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t l = 0; l < n; ++l) out[i] -= x[j] * y[l] * triple_integral(basis, j, l, i);
    }
  }
  return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace fpelab::testing
