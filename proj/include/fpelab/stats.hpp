#pragma once

#include <cstddef>
#include <span>

namespace fpelab::stats {

inline constexpr double kZ95 = 1.959963984540054;

struct Moments {
  std::size_t count = 0;
  double mean = 0.0;
  double variance = 0.0;  // unbiased
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
};

/// Two-pass sample moments with compensated accumulation.
Moments moments(std::span<const double> xs);

struct MeanEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  double lo() const { return mean - kZ95 * std_error; }
  double hi() const { return mean + kZ95 * std_error; }
};

MeanEstimate mean_with_error(std::span<const double> xs);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Wilson score interval for a binomial proportion.
Interval wilson(std::size_t successes, std::size_t trials, double z = kZ95);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
  double intercept_se = 0.0;
};

/// Ordinary least squares y = intercept + slope * x.
LinearFit ols(std::span<const double> x, std::span<const double> y);

bool overlaps(double lo_a, double hi_a, double lo_b, double hi_b);

}  // namespace fpelab::stats
