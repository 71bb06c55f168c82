#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "fpelab/common.hpp"
#include "fpelab/rng.hpp"
#include "fpelab/stats.hpp"

using namespace fpelab;

TEST_CASE("philox known-answer vectors") {
  using P = Philox4x32;
  auto r = P::generate({0, 0, 0, 0}, {0, 0});
  CHECK(r == P::Counter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  r = P::generate({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
  CHECK(r == P::Counter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  r = P::generate({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
  CHECK(r == P::Counter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("keyed draws are pure functions of the key") {
  const KeyedRng a(42), b(42), c(43);
  CHECK(a.normal(Stream::OuNoise, 3, 1, 9) == b.normal(Stream::OuNoise, 3, 1, 9));
  CHECK(a.normal(Stream::OuNoise, 3, 1, 9) != c.normal(Stream::OuNoise, 3, 1, 9));
  CHECK(a.normal(Stream::OuNoise, 3, 1, 9) != a.normal(Stream::Initial, 3, 1, 9));
  std::set<double> seen;
  for (std::uint32_t s = 0; s < 200; ++s) seen.insert(a.uniform(Stream::Audit, 0, 0, s));
  CHECK(seen.size() == 200);
  for (double u : seen) CHECK((u > 0.0 && u < 1.0));
}

TEST_CASE("normal draws have unit variance") {
  const KeyedRng rng(7);
  std::vector<double> xs;
  for (std::uint32_t s = 0; s < 20000; ++s) {
    auto [x, y] = rng.normal_pair(Stream::TestSuite, 0, 0, s);
    xs.push_back(x);
    xs.push_back(y);
  }
  const auto m = stats::moments(xs);
  const double n = static_cast<double>(xs.size());
  CHECK(std::abs(m.mean) < 5.0 / std::sqrt(n));
  CHECK(std::abs(m.variance - 1.0) < 5.0 * std::sqrt(2.0 / n));
  CHECK(std::abs(m.skewness) < 5.0 * std::sqrt(6.0 / n));
  CHECK(std::abs(m.excess_kurtosis) < 5.0 * std::sqrt(24.0 / n));
}

TEST_CASE("moments of a small sample") {
  const std::vector<double> xs{1.0, 2.0, 3.0, 4.0};
  const auto m = stats::moments(xs);
  CHECK(m.mean == doctest::Approx(2.5));
  CHECK(m.variance == doctest::Approx(5.0 / 3.0));
  CHECK(m.skewness == doctest::Approx(0.0));
  const auto e = stats::mean_with_error(xs);
  CHECK(e.std_error == doctest::Approx(std::sqrt(5.0 / 3.0 / 4.0)));
  CHECK(e.lo() < e.mean);
}

TEST_CASE("wilson interval") {
  const auto w = stats::wilson(50, 100);
  CHECK(w.lo == doctest::Approx(0.4038).epsilon(1e-3));
  CHECK(w.hi == doctest::Approx(0.5962).epsilon(1e-3));
  const auto all = stats::wilson(100, 100);
  CHECK(all.hi == doctest::Approx(1.0));
  CHECK(all.lo > 0.95);
}

TEST_CASE("ols recovers an exact line") {
  const std::vector<double> x{0, 1, 2, 3, 4};
  std::vector<double> y;
  for (double v : x) y.push_back(2.0 - 0.5 * v);
  const auto f = stats::ols(x, y);
  CHECK(f.slope == doctest::Approx(-0.5));
  CHECK(f.intercept == doctest::Approx(2.0));
  CHECK(f.slope_se == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("compensated sums and parallel_for") {
  std::vector<double> xs{1e16, 1.0, -1e16, 1.0};
  CHECK(compensated_sum(xs) == 2.0);
  std::vector<int> hit(97, 0);
  parallel_for(hit.size(), 4, [&](std::size_t i) { hit[i] += 1; });
  for (int h : hit) CHECK(h == 1);
  CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) {
                    if (i == 7) throw NumericalError("boom");
                  }),
                  NumericalError);
}

TEST_CASE("config error keeps every issue") {
  const ConfigError e({"first", "second"});
  CHECK(e.issues().size() == 2);
  CHECK(std::string(e.what()).find("second") != std::string::npos);
}
