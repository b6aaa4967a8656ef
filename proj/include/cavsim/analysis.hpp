#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "cavsim/model.hpp"
#include "cavsim/types.hpp"

namespace cavsim {

// ---------------------------------------------------------------------------
// Time-domain occupation readout
// ---------------------------------------------------------------------------

struct VarianceSeries {
  std::vector<double> time;      // window-center times, s
  std::vector<double> variance;  // fractional photocurrent variance per window
  double window = 0;             // s
  double mean_counts = 0;        // trace-average counts per bin
};

// Sliding-window fractional variance of a counts trace. The window is
// rounded to an integer number of bins (at least 4). When
// `subtract_shot_bias` is set, the per-window Poisson floor 1/<counts> is
// removed.
VarianceSeries sliding_variance(const TimeTrace& counts, double window,
                                std::size_t stride = 1,
                                bool subtract_shot_bias = false);

struct OccupationSeries {
  std::vector<double> time;
  std::vector<double> occupation;
  double clipped_fraction = 0;  // fraction of windows clipped at zero
};

// Converts a variance series to mode occupation:
//   n(t) = (var(t) - var_background) / transduction - zero_point_offset,
// clipped below at zero. The default offset removes the half-quantum the
// transduced variance carries at n = 0.
OccupationSeries occupation_from_variance(const VarianceSeries& series,
                                          double transduction,
                                          double var_background,
                                          double zero_point_offset = 0.5);

// Fractional-variance background the sliding-window estimator picks up from
// laser frequency noise: the Ornstein-Uhlenbeck detuning noise (RMS
// `phase_sigma` rad/s, correlation time `phase_tau` s) transduced through the
// cavity fringe, filtered by the detector binning (point samples every
// `sample_dt` averaged over `bin_width`) and by the window-mean removal of a
// `window`-long variance window.
double phase_noise_variance(const DerivedParams& d, double phase_sigma,
                            double phase_tau, double sample_dt,
                            double bin_width, double window);

// ---------------------------------------------------------------------------
// Time-domain fits
// ---------------------------------------------------------------------------

struct DecayFitResult {
  double rate = 0;  // energy decay rate, 1/s
  double rate_sigma = 0;
  double amplitude = 0;
  double amplitude_sigma = 0;
  double asymptote = 0;
  double asymptote_sigma = 0;
  double frequency = 0;  // rad/s; sinusoid variant only
  double frequency_sigma = 0;
  double phase = 0;
  double chi2 = 0;
  int dof = 0;
  bool converged = false;
  std::string message;
};

// y(t) = A exp(-rate t) + C. Requires at least 10 points.
DecayFitResult fit_exponential_decay(const std::vector<double>& t,
                                     const std::vector<double>& y,
                                     const std::vector<double>& sigma = {});

// y(t) = A exp(-rate t / 2) cos(omega t + phi) + C; `rate` is the energy
// decay rate (the amplitude decays at rate/2). Throws FitError when no
// oscillation stands at least 3x above the spectral floor.
DecayFitResult fit_decaying_sinusoid(const std::vector<double>& t,
                                     const std::vector<double>& y,
                                     const std::vector<double>& sigma = {});

// ---------------------------------------------------------------------------
// Spectra
// ---------------------------------------------------------------------------

enum class PsdWindow { hann, rectangular };

struct Spectrum {
  std::vector<double> frequency;  // Hz, DC through Nyquist
  std::vector<double> psd;        // one-sided, 1/Hz in fractional units
  std::size_t n_averages = 0;     // segments averaged
  PsdWindow window = PsdWindow::hann;
  double resolution_bandwidth = 0;  // Hz, grid spacing
  double noise_bandwidth = 0;       // Hz, equivalent noise bandwidth per bin
  double sample_period = 0;         // s
  double total_variance = 0;        // rectangle-rule integral of psd
};

// Welch average over non-overlapping segments of every trace, one-sided
// density normalization. With `fractional` set each trace is first divided
// by its own mean (which must be positive); segment means are removed either
// way. With a rectangular window and segment_length == trace length the
// integral of the PSD equals the population variance of the normalized
// trace exactly.
Spectrum welch_psd(const std::vector<TimeTrace>& traces, std::size_t segment_length,
                   PsdWindow window = PsdWindow::hann, bool fractional = true);

// ---------------------------------------------------------------------------
// Spectral model and fit
// ---------------------------------------------------------------------------

struct SpectralParams {
  double occupation = 1;       // n
  double gamma_tot = 1e5;      // total energy damping, 1/s
  double omega_peak = 1;       // rad/s
  double white_level = 1e-9;   // 1/Hz
  double dip_amplitude = 0;    // 1/Hz at unit structure function
};

// One-sided PSD of the detected fractional photocurrent:
//   S(nu) = gain * [mech(nu) + dip_amplitude * structure(nu)] + white_level
// where gain = white_level / white_reference anchors the transduced scale to
// the white background, mech is the folded two-Lorentzian sideband spectrum
// whose band integral is transduction * (n + 1/2), and structure is the
// interference term that carves the sub-white dip near the peak. When
// `jacobian` is non-null it receives dS/d{n, gamma, omega_peak, W, C} per bin.
void spectral_model(const SpectralParams& p, const DerivedParams& d,
                    double white_reference, const std::vector<double>& freq_hz,
                    std::vector<double>* psd,
                    std::vector<std::array<double, 5>>* jacobian);

enum class SpectrumFitMode { direct, bath };

struct SpectrumFitResult {
  double occupation = 0;
  double occupation_sigma = 0;
  double occupation_lo = 0;  // profile-likelihood 1-sigma interval
  double occupation_hi = 0;
  double gamma_tot = 0;
  double gamma_tot_sigma = 0;
  double omega_peak = 0;  // rad/s
  double white_level = 0;
  double white_sigma = 0;
  double dip_amplitude = 0;
  double dip_sigma = 0;
  double gain = 0;            // white_level / white_reference
  double occupation_area = 0; // background-subtracted band-integral estimate
  double bath_occupation = 0;      // bath mode only
  double bath_occupation_sigma = 0;
  double bath_rate = 0;            // bath mode only, 1/s
  double bath_rate_sigma = 0;
  double chi2 = 0;
  int dof = 0;
  bool converged = false;
  std::vector<bool> at_bound;
  std::string message;
};

// Fits the spectral model over [f_lo, f_hi] (Hz). Direct mode floats
// {n, gamma_tot, omega_peak, W, C}; bath mode reparameterizes n and
// gamma_tot through a thermal-bath occupation and mixing rate against the
// cavity rates in `d`. The peak frequency may move at most 10% from the
// configured trap frequency.
SpectrumFitResult fit_spectrum(const Spectrum& s, const DerivedParams& d,
                               double white_reference, SpectrumFitMode mode,
                               double f_lo, double f_hi);

// ---------------------------------------------------------------------------
// Rate-vs-scattering regression
// ---------------------------------------------------------------------------

struct RateScalingPoint {
  double gamma_sc = 0;   // photon scattering rate, 1/s
  double gamma_exp = 0;  // measured energy decay rate, 1/s
  double sigma = 0;      // uncertainty on gamma_exp, 1/s
};

struct RateScalingFit {
  double slope = 0;  // d gamma_exp / d (eta gamma_sc): the cooperativity factor f
  double slope_sigma = 0;
  double intercept = 0;  // residual mixing rate gamma_m, 1/s
  double intercept_sigma = 0;
  double chi2 = 0;
  int dof = 0;
};

// Weighted linear regression gamma_exp = f * (eta gamma_sc) + gamma_m.
RateScalingFit fit_rate_vs_scattering(const std::vector<RateScalingPoint>& points,
                                      double eta);

struct ProportionalFit {
  double coefficient = 0;
  double coefficient_sigma = 0;
  double chi2 = 0;
  int dof = 0;
};

// Weighted fit of y = c x through the origin.
ProportionalFit fit_proportional(const std::vector<double>& x,
                                 const std::vector<double>& y,
                                 const std::vector<double>& sigma = {});

}  // namespace cavsim
