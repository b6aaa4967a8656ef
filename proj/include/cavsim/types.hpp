#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace cavsim {

// Raised for invalid physical or file configuration; the CLI maps it to
// exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when a requested quantity does not exist because the configuration
// is not net dissipative (anti-damped or undamped); CLI exit code 3.
class InstabilityError : public std::runtime_error {
 public:
  explicit InstabilityError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when an estimator cannot produce a result (non-convergence, or the
// data lacks the feature the fit needs); CLI exit code 4.
class FitError : public std::runtime_error {
 public:
  explicit FitError(const std::string& what) : std::runtime_error(what) {}
};

// Uniformly sampled real-valued series (position, photon number, detected
// counts, ...) plus the seed that produced it.
struct TimeTrace {
  double dt = 0;      // sample period, s
  double t0 = 0;      // time of first sample, s
  std::vector<double> values;
  std::uint64_t seed = 0;
  std::string label;

  double time_at(std::size_t i) const { return t0 + dt * static_cast<double>(i); }
  double duration() const { return dt * static_cast<double>(values.size()); }
};

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Population variance (1/n), matching the normalization used by the PSD
// integral checks.
inline double variance(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return acc / static_cast<double>(v.size());
}

}  // namespace cavsim
