#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fpelab {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand sizes or basis tags do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A quadrature grid is too coarse for the bandwidth it must integrate.
class AliasingError : public Error {
 public:
  using Error::Error;
};

/// A configuration violates one or more hypotheses; every violation is kept.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> issues);
  const std::vector<std::string>& issues() const noexcept { return issues_; }

 private:
  std::vector<std::string> issues_;
};

/// Numerical failure (blow-up, divergent estimator, failed calibration).
class NumericalError : public Error {
 public:
  using Error::Error;
};

class BlowupError : public NumericalError {
 public:
  BlowupError(double time, const std::string& what);
  double time() const noexcept { return time_; }

 private:
  double time_;
};

class CalibrationError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Neumaier compensated summation. Results do not depend on how the input
/// was partitioned as long as partial sums are merged in a fixed order.
class NeumaierSum {
 public:
  void add(double x) noexcept;
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

double compensated_sum(std::span<const double> xs) noexcept;

/// Number of workers to use; 0 means hardware concurrency.
int resolve_threads(int requested) noexcept;

/// Runs body(i) for i in [0, n) on `threads` workers using a static block
/// partition. If any call throws, the exception of the smallest failing index
/// is rethrown after all workers have joined.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body);

void require(bool cond, const std::string& message);
void require_same_size(std::size_t a, std::size_t b, const char* what);

}  // namespace fpelab
