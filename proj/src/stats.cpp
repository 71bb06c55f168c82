#include "fpelab/stats.hpp"

#include <cmath>

#include "fpelab/common.hpp"

namespace fpelab::stats {

Moments moments(std::span<const double> xs) {
  Moments m;
  m.count = xs.size();
  if (xs.empty()) return m;
  const double n = static_cast<double>(xs.size());
  m.mean = compensated_sum(xs) / n;
  NeumaierSum s2, s3, s4;
  for (double x : xs) {
    const double d = x - m.mean;
    const double d2 = d * d;
    s2.add(d2);
    s3.add(d2 * d);
    s4.add(d2 * d2);
  }
  const double m2 = s2.value() / n;
  m.variance = xs.size() > 1 ? s2.value() / (n - 1.0) : 0.0;
  if (m2 > 0.0) {
    m.skewness = (s3.value() / n) / std::pow(m2, 1.5);
    m.excess_kurtosis = (s4.value() / n) / (m2 * m2) - 3.0;
  }
  return m;
}

MeanEstimate mean_with_error(std::span<const double> xs) {
  const auto m = moments(xs);
  MeanEstimate e;
  e.mean = m.mean;
  e.std_error = m.count > 1 ? std::sqrt(m.variance / static_cast<double>(m.count)) : 0.0;
  return e;
}

Interval wilson(std::size_t successes, std::size_t trials, double z) {
  if (trials == 0) return {0.0, 1.0};
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double centre = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

LinearFit ols(std::span<const double> x, std::span<const double> y) {
  require_same_size(x.size(), y.size(), "ols");
  require(x.size() >= 2, "ols: need at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = compensated_sum(x) / n;
  const double my = compensated_sum(y) / n;
  NeumaierSum sxx, sxy;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx.add((x[i] - mx) * (x[i] - mx));
    sxy.add((x[i] - mx) * (y[i] - my));
  }
  require(sxx.value() > 0.0, "ols: degenerate abscissae");
  LinearFit f;
  f.slope = sxy.value() / sxx.value();
  f.intercept = my - f.slope * mx;
  if (x.size() > 2) {
    NeumaierSum rss;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double r = y[i] - (f.intercept + f.slope * x[i]);
      rss.add(r * r);
    }
    const double s2 = rss.value() / (n - 2.0);
    f.slope_se = std::sqrt(s2 / sxx.value());
    f.intercept_se = std::sqrt(s2 * (1.0 / n + mx * mx / sxx.value()));
  }
  return f;
}

bool overlaps(double lo_a, double hi_a, double lo_b, double hi_b) {
  return lo_a <= hi_b && lo_b <= hi_a;
}

}  // namespace fpelab::stats
