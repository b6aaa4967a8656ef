#include "cavsim/photodetect.hpp"

#include <cmath>
#include <stdexcept>

#include "cavsim/random.hpp"

namespace cavsim {

namespace {

// Number of samples per detector bin; throws unless the bin width is an
// integer multiple of the sample period.
std::size_t samples_per_bin(double bin_width, double dt) {
  if (bin_width <= 0) throw ConfigError("detector bin_width must be positive");
  if (dt <= 0) throw ConfigError("rate series sample period must be positive");
  const double ratio = bin_width / dt;
  const double rounded = std::round(ratio);
  if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-9 * ratio) {
    throw ConfigError("detector bin_width must be an integer multiple of the sample period");
  }
  return static_cast<std::size_t>(rounded);
}

}  // namespace

TimeTrace PhotocurrentTrace::fractional() const {
  if (!(mean_counts > 0)) {
    throw ConfigError("fractional photocurrent requires a positive mean count");
  }
  TimeTrace out = counts;
  const double inv = 1.0 / mean_counts;
  for (double& v : out.values) v *= inv;
  return out;
}

PhotocurrentTrace detect(const TimeTrace& rate_series, const DetectorConfig& det,
                         std::uint64_t seed) {
  if (det.quantum_efficiency <= 0 || det.quantum_efficiency > 1) {
    throw ConfigError("detector quantum_efficiency must lie in (0, 1]");
  }
  if (det.gaussian_threshold <= 0) {
    throw ConfigError("detector gaussian_threshold must be positive");
  }
  const std::size_t m = samples_per_bin(det.bin_width, rate_series.dt);
  const std::size_t n_bins = rate_series.values.size() / m;
  if (n_bins == 0) throw ConfigError("rate series shorter than one detector bin");

  std::vector<double> means(n_bins);
  double total = 0;
  for (std::size_t b = 0; b < n_bins; ++b) {
    double acc = 0;
    for (std::size_t j = 0; j < m; ++j) {
      const double r = rate_series.values[b * m + j];
      if (r < 0) throw std::invalid_argument("detect: negative photon rate");
      acc += r;
    }
    means[b] = det.quantum_efficiency * acc * rate_series.dt;
    total += means[b];
  }
  const double expected_mean = total / static_cast<double>(n_bins);

  DetectionMode mode = det.mode;
  if (mode == DetectionMode::auto_mode) {
    mode = expected_mean > det.gaussian_threshold ? DetectionMode::gaussian
                                                  : DetectionMode::poisson;
  }

  PhotocurrentTrace out;
  out.counts.dt = det.bin_width;
  out.counts.t0 = rate_series.t0;
  out.counts.seed = seed;
  out.counts.label = rate_series.label.empty() ? "counts" : rate_series.label + ".counts";
  out.counts.values.resize(n_bins);
  out.mode_used = mode;
  out.source_label = rate_series.label;

  Rng rng(seed);
  double realized = 0;
  for (std::size_t b = 0; b < n_bins; ++b) {
    double c;
    if (mode == DetectionMode::poisson) {
      c = static_cast<double>(rng.poisson(means[b]));
    } else {
      c = means[b] + std::sqrt(means[b]) * rng.normal();
    }
    out.counts.values[b] = c;
    realized += c;
  }
  out.mean_counts = realized / static_cast<double>(n_bins);
  out.mean_rate = out.mean_counts / det.bin_width;
  return out;
}

PhotocurrentTrace add_electronic_noise(const PhotocurrentTrace& trace,
                                       const DetectorConfig& det,
                                       std::uint64_t seed) {
  if (trace.counts.values.empty()) throw ConfigError("empty photocurrent trace");
  const double psd = resolved_electronic_psd(det, trace.mean_rate);
  PhotocurrentTrace out = trace;
  if (psd <= 0) return out;
  // Fractional white PSD p over bin t_b gives per-bin variance p/(2 t_b);
  // scale back to counts through the mean.
  const double sd = trace.mean_counts * std::sqrt(psd / (2.0 * trace.counts.dt));
  Rng rng(seed);
  for (double& v : out.counts.values) v += sd * rng.normal();
  return out;
}

double shot_noise_psd(double mean_detected_rate) {
  if (mean_detected_rate <= 0) {
    throw ConfigError("shot-noise PSD requires a positive detected rate");
  }
  return 2.0 / mean_detected_rate;
}

double resolved_electronic_psd(const DetectorConfig& det, double mean_detected_rate) {
  if (det.electronic_noise_psd >= 0) return det.electronic_noise_psd;
  return 2.0 * shot_noise_psd(mean_detected_rate);
}

double background_white_level(const DetectorConfig& det, double mean_input_rate) {
  const double detected = det.quantum_efficiency * mean_input_rate;
  return shot_noise_psd(detected) + resolved_electronic_psd(det, detected);
}

double background_variance(const DetectorConfig& det, double mean_input_rate) {
  const double detected = det.quantum_efficiency * mean_input_rate;
  if (detected <= 0) throw ConfigError("background variance requires a positive rate");
  return 1.0 / (detected * det.bin_width) +
         resolved_electronic_psd(det, detected) / (2.0 * det.bin_width);
}

double tone_binning_attenuation(double omega, double sample_dt, double bin_width) {
  if (omega < 0 || sample_dt <= 0) {
    throw ConfigError("tone_binning_attenuation requires omega >= 0 and sample_dt > 0");
  }
  const double m = static_cast<double>(samples_per_bin(bin_width, sample_dt));
  const double half_theta = 0.5 * omega * sample_dt;
  const double denom = m * std::sin(half_theta);
  if (std::abs(denom) < 1e-12) return 1.0;  // omega -> 0 limit
  const double d = std::sin(m * half_theta) / denom;
  return d * d;
}

}  // namespace cavsim
