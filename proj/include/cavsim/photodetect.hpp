#pragma once

#include <cstdint>
#include <string>

#include "cavsim/types.hpp"

namespace cavsim {

enum class DetectionMode { poisson, gaussian, auto_mode };

struct DetectorConfig {
  double bin_width = 2e-6;  // s; must be an integer multiple of the input sample period
  double quantum_efficiency = 1.0;
  // One-sided electronic-noise PSD in fractional (I/Ibar)^2/Hz units.
  // Negative selects the representative default of twice the shot-noise
  // level at the detected rate; zero disables it.
  double electronic_noise_psd = -1.0;
  DetectionMode mode = DetectionMode::auto_mode;
  double gaussian_threshold = 50.0;  // auto: gaussian above this mean counts/bin
};

struct PhotocurrentTrace {
  TimeTrace counts;        // detected counts per bin (dt = bin_width)
  double mean_counts = 0;  // realized average counts per bin, pre electronic noise
  double mean_rate = 0;    // mean_counts / bin_width, 1/s
  DetectionMode mode_used = DetectionMode::poisson;
  std::string source_label;

  // counts / mean_counts: the fractional photocurrent I/Ibar the analysis
  // pipeline operates on.
  TimeTrace fractional() const;
};

// Bins the rate series and draws per-bin counts: Poisson with mean
// QE * integral(rate dt), or matched-moment Gaussian; auto picks Gaussian
// once the trace-average mean counts per bin exceeds the threshold.
PhotocurrentTrace detect(const TimeTrace& rate_series, const DetectorConfig& det,
                         std::uint64_t seed);

// Adds white Gaussian noise of the configured one-sided PSD (converted to
// counts through the trace's own mean), independent of the signal.
PhotocurrentTrace add_electronic_noise(const PhotocurrentTrace& trace,
                                       const DetectorConfig& det,
                                       std::uint64_t seed);

// One-sided shot-noise PSD of the fractional photocurrent: 2 / detected rate.
double shot_noise_psd(double mean_detected_rate);

// The electronic PSD actually applied (resolves the auto default).
double resolved_electronic_psd(const DetectorConfig& det, double mean_detected_rate);

// Shot + electronic white level of the fractional photocurrent PSD, 1/Hz.
double background_white_level(const DetectorConfig& det, double mean_input_rate);

// Fractional variance of a constant-rate detected trace per bin:
// 1/(R t_bin) + electronic_psd/(2 t_bin).
double background_variance(const DetectorConfig& det, double mean_input_rate);

// Power attenuation a detector bin applies to a rate tone at angular
// frequency omega.  A bin averages M = bin_width/sample_dt point samples of
// the rate series, which scales the tone's amplitude by the Dirichlet factor
// sin(M theta/2) / (M sin(theta/2)) with theta = omega * sample_dt; the
// returned value is its square (the factor on the tone's variance).
double tone_binning_attenuation(double omega, double sample_dt, double bin_width);

}  // namespace cavsim
