#include "cavsim/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <limits>
#include <mutex>
#include <numeric>

#include <fftw3.h>

#include "cavsim/dynamics.hpp"
#include "cavsim/fit.hpp"
#include "cavsim/photodetect.hpp"

namespace cavsim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// FFTW planning is not thread safe; execution of independent plans is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct RealFft {
  std::size_t n = 0;
  double* in = nullptr;
  fftw_complex* out = nullptr;
  fftw_plan plan = nullptr;

  explicit RealFft(std::size_t length) : n(length) {
    in = fftw_alloc_real(n);
    out = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard<std::mutex> lock(fftw_planner_mutex());
      fftw_destroy_plan(plan);
    }
    fftw_free(in);
    fftw_free(out);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  void execute() { fftw_execute(plan); }
};

double median_of(std::vector<double> v) {
  if (v.empty()) return 0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    const double lo = *std::max_element(v.begin(), v.begin() + mid);
    m = 0.5 * (m + lo);
  }
  return m;
}

std::string format_residual(double chi2, int dof) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), " (residual chi2 = %.6g, dof = %d)", chi2, dof);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Sliding variance and occupation readout
// ---------------------------------------------------------------------------

VarianceSeries sliding_variance(const TimeTrace& counts, double window,
                                std::size_t stride, bool subtract_shot_bias) {
  if (counts.values.empty()) throw ConfigError("sliding_variance: empty trace");
  if (counts.dt <= 0) throw ConfigError("sliding_variance: sample period must be positive");
  if (stride == 0) throw ConfigError("sliding_variance: stride must be at least 1");
  const double ratio = window / counts.dt;
  const std::size_t w = static_cast<std::size_t>(std::llround(ratio));
  if (w < 4) throw ConfigError("sliding_variance: window must span at least 4 bins");
  if (w > counts.values.size()) {
    throw ConfigError("sliding_variance: window longer than the trace");
  }

  const std::size_t n = counts.values.size();
  std::vector<double> s1(n + 1, 0.0), s2(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    s1[i + 1] = s1[i] + counts.values[i];
    s2[i + 1] = s2[i] + counts.values[i] * counts.values[i];
  }

  VarianceSeries out;
  out.window = static_cast<double>(w) * counts.dt;
  out.mean_counts = s1[n] / static_cast<double>(n);
  const double inv_w = 1.0 / static_cast<double>(w);
  for (std::size_t start = 0; start + w <= n; start += stride) {
    const double m1 = (s1[start + w] - s1[start]) * inv_w;
    const double m2 = (s2[start + w] - s2[start]) * inv_w;
    if (!(m1 > 0)) {
      throw ConfigError("sliding_variance: window with non-positive mean counts");
    }
    double var = m2 / (m1 * m1) - 1.0;  // fractional variance
    // The population variance of W bins holds (1 - 1/W) of any white noise:
    // subtracting the full Poisson floor 1/m would leave a negative offset.
    if (subtract_shot_bias) var -= (1.0 - inv_w) / m1;
    const double center = start + 0.5 * static_cast<double>(w - 1);
    out.time.push_back(counts.t0 + center * counts.dt);
    out.variance.push_back(var);
  }
  return out;
}

OccupationSeries occupation_from_variance(const VarianceSeries& series,
                                          double transduction,
                                          double var_background,
                                          double zero_point_offset) {
  if (!(transduction > 0)) {
    throw ConfigError("occupation_from_variance: transduction must be positive");
  }
  OccupationSeries out;
  out.time = series.time;
  out.occupation.resize(series.variance.size());
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < series.variance.size(); ++i) {
    const double n =
        (series.variance[i] - var_background) / transduction - zero_point_offset;
    if (n < 0) {
      out.occupation[i] = 0;
      ++clipped;
    } else {
      out.occupation[i] = n;
    }
  }
  out.clipped_fraction =
      series.variance.empty() ? 0.0
                              : static_cast<double>(clipped) /
                                    static_cast<double>(series.variance.size());
  return out;
}

double phase_noise_variance(const DerivedParams& d, double phase_sigma,
                            double phase_tau, double sample_dt,
                            double bin_width, double window) {
  if (phase_sigma <= 0 || phase_tau <= 0) return 0.0;
  const double kappa = d.config.cavity.kappa;
  const double delta = d.config.probe.delta_cavity;

  // Detuning noise enters the cavity equation exactly like a cavity-shift
  // modulation, so a tone of amplitude nu at frequency w transduces to a
  // fractional-intensity tone of amplitude (2 nu / kappa) |L+(w) - L-(w)|.
  // The estimator sees that tone through the bin average (low pass) and the
  // removal of each window's own mean (high pass).
  auto integrand = [&](double w) {
    const SidebandPair s = sideband_lorentzians(delta, w, kappa);
    const double transfer = std::norm(s.upper - s.lower) * 4.0 / (kappa * kappa);
    const double s_nu = 2.0 * phase_sigma * phase_sigma * phase_tau /
                        (1.0 + w * w * phase_tau * phase_tau);
    const double bin_pass = tone_binning_attenuation(w, sample_dt, bin_width);
    const double window_pass = 1.0 - tone_binning_attenuation(w, bin_width, window);
    return s_nu * transfer * bin_pass * window_pass;
  };

  // The integrand is even in frequency; resolve the fringe structure (width
  // ~kappa) on the inner segment and the Ornstein-Uhlenbeck rolloff on the
  // outer one, beyond which it falls off as w^-4.
  const double w_mid = 20.0 * kappa;
  const double w_max = std::max(40.0 * kappa, 30.0 / phase_tau);
  auto simpson = [&](double a, double b, std::size_t intervals) {
    const double h = (b - a) / static_cast<double>(intervals);
    double acc = integrand(a) + integrand(b);
    for (std::size_t i = 1; i < intervals; ++i) {
      acc += integrand(a + h * static_cast<double>(i)) * (i % 2 ? 4.0 : 2.0);
    }
    return acc * h / 3.0;
  };
  const double integral = simpson(0, w_mid, 4096) + simpson(w_mid, w_max, 4096);
  return integral / pi;  // two-sided spectrum folded onto positive frequencies
}

// ---------------------------------------------------------------------------
// Time-domain fits
// ---------------------------------------------------------------------------

DecayFitResult fit_exponential_decay(const std::vector<double>& t,
                                     const std::vector<double>& y,
                                     const std::vector<double>& sigma) {
  if (t.size() != y.size()) throw ConfigError("fit_exponential_decay: size mismatch");
  if (t.size() < 10) throw ConfigError("fit_exponential_decay: need at least 10 points");
  if (!sigma.empty() && sigma.size() != y.size()) {
    throw ConfigError("fit_exponential_decay: sigma size mismatch");
  }
  const std::size_t n = t.size();
  const double t0 = t.front();
  const double span = t.back() - t.front();
  if (!(span > 0)) throw ConfigError("fit_exponential_decay: zero time span");

  // The model is linear in (A, C) once the rate is fixed, so seed the fit by
  // profiling chi2 over a log-spaced rate grid (separable least squares).
  // This avoids the flat amplitude/asymptote valley that traps a plain
  // Levenberg-Marquardt start when the decay is weak or noisy.
  double min_gap = span;
  for (std::size_t i = 1; i < n; ++i) min_gap = std::min(min_gap, t[i] - t[i - 1]);
  if (!(min_gap > 0)) throw ConfigError("fit_exponential_decay: non-increasing times");
  const double g_lo = 1e-2 / span;
  const double g_hi = 3.0 / min_gap;
  auto profile = [&](double g, double* a_out, double* c_out) {
    double sww = 0, swe = 0, swee = 0, swy = 0, swey = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = sigma.empty() ? 1.0 : 1.0 / (sigma[i] * sigma[i]);
      const double e = std::exp(-g * (t[i] - t0));
      sww += w;
      swe += w * e;
      swee += w * e * e;
      swy += w * y[i];
      swey += w * e * y[i];
    }
    const double det = swee * sww - swe * swe;
    double a = 0, c = swy / sww;
    if (std::abs(det) > 1e-30 * swee * sww) {
      a = (swey * sww - swe * swy) / det;
      c = (swee * swy - swe * swey) / det;
    }
    double chi2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = sigma.empty() ? 1.0 : 1.0 / (sigma[i] * sigma[i]);
      const double r = y[i] - (a * std::exp(-g * (t[i] - t0)) + c);
      chi2 += w * r * r;
    }
    if (a_out) *a_out = a;
    if (c_out) *c_out = c;
    return chi2;
  };
  double g0 = g_lo, a0 = 0, c0 = 0, best = std::numeric_limits<double>::infinity();
  const int grid = 80;
  int best_k = 0;
  for (int k = 0; k <= grid; ++k) {
    const double g = g_lo * std::pow(g_hi / g_lo, static_cast<double>(k) / grid);
    double a = 0, c = 0;
    const double chi2 = profile(g, &a, &c);
    if (chi2 < best) {
      best = chi2;
      best_k = k;
      g0 = g;
      a0 = a;
      c0 = c;
    }
  }
  if (best_k == 0) {
    // chi2 keeps improving toward the zero-rate (straight line) limit: the
    // data do not resolve a decay, and unbounded optimization would crawl
    // down the degenerate A -> +inf, C -> -inf ridge forever.
    throw FitError("decay rate is not resolved by the data" +
                   format_residual(best, static_cast<int>(n) - 3));
  }

  auto model = [&](const Eigen::VectorXd& p, Eigen::VectorXd& m, Eigen::MatrixXd* jac) {
    const double a = p[0], g = p[1], c = p[2];
    for (std::size_t i = 0; i < n; ++i) {
      const double dt_i = t[i] - t0;
      const double e = std::exp(-g * dt_i);
      m[static_cast<Eigen::Index>(i)] = a * e + c;
      if (jac) {
        (*jac)(static_cast<Eigen::Index>(i), 0) = e;
        (*jac)(static_cast<Eigen::Index>(i), 1) = -a * dt_i * e;
        (*jac)(static_cast<Eigen::Index>(i), 2) = 1.0;
      }
    }
  };

  Eigen::VectorXd p0(3), lo(3), hi(3);
  p0 << a0, g0, c0;
  lo << -kInf, g_lo, -kInf;
  hi << kInf, g_hi, kInf;
  Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(n));
  Eigen::VectorXd sv;
  if (!sigma.empty()) {
    sv = Eigen::Map<const Eigen::VectorXd>(sigma.data(), static_cast<Eigen::Index>(n));
  }
  const FitResult fr = levenberg_marquardt(model, yv, sv, p0, lo, hi);
  if (!fr.converged) {
    throw FitError("exponential decay fit did not converge" +
                   format_residual(fr.chi2, fr.dof));
  }

  DecayFitResult out;
  out.amplitude = fr.params[0];
  out.amplitude_sigma = fr.uncertainties[0];
  out.rate = fr.params[1];
  out.rate_sigma = fr.uncertainties[1];
  out.asymptote = fr.params[2];
  out.asymptote_sigma = fr.uncertainties[2];
  out.chi2 = fr.chi2;
  out.dof = fr.dof;
  out.converged = fr.converged;
  out.message = fr.message;
  return out;
}

DecayFitResult fit_decaying_sinusoid(const std::vector<double>& t,
                                     const std::vector<double>& y,
                                     const std::vector<double>& sigma) {
  if (t.size() != y.size()) throw ConfigError("fit_decaying_sinusoid: size mismatch");
  if (t.size() < 16) throw ConfigError("fit_decaying_sinusoid: need at least 16 points");
  if (!sigma.empty() && sigma.size() != y.size()) {
    throw ConfigError("fit_decaying_sinusoid: sigma size mismatch");
  }
  const std::size_t n = t.size();
  const double dt = (t.back() - t.front()) / static_cast<double>(n - 1);
  if (!(dt > 0)) throw ConfigError("fit_decaying_sinusoid: zero time span");
  for (std::size_t i = 1; i < n; ++i) {
    if (std::abs((t[i] - t[i - 1]) - dt) > 1e-6 * dt) {
      throw ConfigError("fit_decaying_sinusoid: time grid must be uniform");
    }
  }
  const double t0 = t.front();
  const double span = t.back() - t.front();

  // Rectangular periodogram for peak detection and the frequency seed.
  double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  RealFft fft(n);
  for (std::size_t i = 0; i < n; ++i) fft.in[i] = y[i] - mean;
  fft.execute();
  const std::size_t nb = n / 2 + 1;
  std::vector<double> power(nb, 0.0);
  for (std::size_t k = 1; k < nb; ++k) {
    power[k] = fft.out[k][0] * fft.out[k][0] + fft.out[k][1] * fft.out[k][1];
  }
  std::size_t k_peak = 1;
  for (std::size_t k = 2; k < nb; ++k) {
    if (power[k] > power[k_peak]) k_peak = k;
  }
  const double floor = median_of(std::vector<double>(power.begin() + 1, power.end()));
  if (!(power[k_peak] > 3.0 * floor) || floor == 0.0) {
    throw FitError("no oscillation detected: spectral peak below 3x the noise floor");
  }
  const double w0 = two_pi * static_cast<double>(k_peak) / (static_cast<double>(n) * dt);

  // Half-power width of the peak seeds the energy decay rate (amplitude
  // Lorentzian FWHM in Hz equals rate / 2 pi).
  const double half = 0.5 * power[k_peak];
  std::size_t k_lo = k_peak, k_hi = k_peak;
  while (k_lo > 1 && power[k_lo - 1] > half) --k_lo;
  while (k_hi + 1 < nb && power[k_hi + 1] > half) ++k_hi;
  double g0 = two_pi * static_cast<double>(k_hi - k_lo + 1) / (static_cast<double>(n) * dt);
  g0 = std::clamp(g0, 2.0 / span, w0);

  // Linear least squares at (w0, g0) seeds amplitude, phase, and offset.
  double m[3][3] = {{0}}, rhs[3] = {0};
  for (std::size_t i = 0; i < n; ++i) {
    const double dt_i = t[i] - t0;
    const double e = std::exp(-0.5 * g0 * dt_i);
    const double b[3] = {e * std::cos(w0 * dt_i), e * std::sin(w0 * dt_i), 1.0};
    for (int a = 0; a < 3; ++a) {
      rhs[a] += b[a] * y[i];
      for (int c = 0; c < 3; ++c) m[a][c] += b[a] * b[c];
    }
  }
  Eigen::Matrix3d mm;
  Eigen::Vector3d rv;
  for (int a = 0; a < 3; ++a) {
    rv[a] = rhs[a];
    for (int c = 0; c < 3; ++c) mm(a, c) = m[a][c];
  }
  const Eigen::Vector3d abc = mm.ldlt().solve(rv);
  const double a0 = std::hypot(abc[0], abc[1]);
  const double phi0 = std::atan2(-abc[1], abc[0]);
  const double c0 = abc[2];

  auto model = [&](const Eigen::VectorXd& p, Eigen::VectorXd& mv, Eigen::MatrixXd* jac) {
    const double a = p[0], g = p[1], w = p[2], phi = p[3], c = p[4];
    for (std::size_t i = 0; i < n; ++i) {
      const double dt_i = t[i] - t0;
      const double e = std::exp(-0.5 * g * dt_i);
      const double arg = w * dt_i + phi;
      const double cs = std::cos(arg), sn = std::sin(arg);
      mv[static_cast<Eigen::Index>(i)] = a * e * cs + c;
      if (jac) {
        const Eigen::Index ii = static_cast<Eigen::Index>(i);
        (*jac)(ii, 0) = e * cs;
        (*jac)(ii, 1) = -0.5 * dt_i * a * e * cs;
        (*jac)(ii, 2) = -a * e * sn * dt_i;
        (*jac)(ii, 3) = -a * e * sn;
        (*jac)(ii, 4) = 1.0;
      }
    }
  };

  Eigen::VectorXd p0(5), lo(5), hi(5);
  p0 << a0, g0, w0, phi0, c0;
  lo << 0.0, 0.0, 0.5 * w0, -two_pi, -kInf;
  hi << kInf, kInf, 2.0 * w0, two_pi, kInf;
  Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(n));
  Eigen::VectorXd sv;
  if (!sigma.empty()) {
    sv = Eigen::Map<const Eigen::VectorXd>(sigma.data(), static_cast<Eigen::Index>(n));
  }
  const FitResult fr = levenberg_marquardt(model, yv, sv, p0, lo, hi);
  if (!fr.converged) {
    throw FitError("decaying sinusoid fit did not converge" +
                   format_residual(fr.chi2, fr.dof));
  }

  DecayFitResult out;
  out.amplitude = fr.params[0];
  out.amplitude_sigma = fr.uncertainties[0];
  out.rate = fr.params[1];
  out.rate_sigma = fr.uncertainties[1];
  out.frequency = fr.params[2];
  out.frequency_sigma = fr.uncertainties[2];
  out.phase = fr.params[3];
  out.asymptote = fr.params[4];
  out.asymptote_sigma = fr.uncertainties[4];
  out.chi2 = fr.chi2;
  out.dof = fr.dof;
  out.converged = fr.converged;
  out.message = fr.message;
  return out;
}

// ---------------------------------------------------------------------------
// Welch PSD
// ---------------------------------------------------------------------------

Spectrum welch_psd(const std::vector<TimeTrace>& traces, std::size_t segment_length,
                   PsdWindow window, bool fractional) {
  if (traces.empty()) throw ConfigError("welch_psd: no traces");
  if (segment_length < 8) throw ConfigError("welch_psd: segment length must be >= 8");
  const double dt = traces.front().dt;
  if (!(dt > 0)) throw ConfigError("welch_psd: sample period must be positive");
  for (const TimeTrace& tr : traces) {
    if (std::abs(tr.dt - dt) > 1e-9 * dt) {
      throw ConfigError("welch_psd: traces have mismatched sample periods");
    }
    if (tr.values.size() < segment_length) {
      throw ConfigError("welch_psd: trace shorter than one segment");
    }
  }

  const std::size_t L = segment_length;
  const std::size_t nb = L / 2 + 1;
  std::vector<double> w(L, 1.0);
  if (window == PsdWindow::hann) {
    for (std::size_t i = 0; i < L; ++i) {
      w[i] = 0.5 * (1.0 - std::cos(two_pi * static_cast<double>(i) / static_cast<double>(L)));
    }
  }
  double sumw = 0, sumw2 = 0;
  for (double v : w) {
    sumw += v;
    sumw2 += v * v;
  }

  RealFft fft(L);
  std::vector<double> acc(nb, 0.0);
  std::size_t n_segments = 0;
  const double density_norm = dt / sumw2;

  for (const TimeTrace& tr : traces) {
    double scale = 1.0;
    if (fractional) {
      const double mu = mean(tr.values);
      if (!(mu > 0)) {
        throw ConfigError("welch_psd: fractional normalization needs a positive trace mean");
      }
      scale = 1.0 / mu;
    }
    const std::size_t n_seg = tr.values.size() / L;
    for (std::size_t s = 0; s < n_seg; ++s) {
      const double* src = tr.values.data() + s * L;
      double seg_mean = 0;
      for (std::size_t i = 0; i < L; ++i) seg_mean += src[i] * scale;
      seg_mean /= static_cast<double>(L);
      for (std::size_t i = 0; i < L; ++i) {
        fft.in[i] = (src[i] * scale - seg_mean) * w[i];
      }
      fft.execute();
      for (std::size_t k = 0; k < nb; ++k) {
        const double mag2 =
            fft.out[k][0] * fft.out[k][0] + fft.out[k][1] * fft.out[k][1];
        const bool edge = (k == 0) || (L % 2 == 0 && k == nb - 1);
        acc[k] += (edge ? 1.0 : 2.0) * mag2 * density_norm;
      }
      ++n_segments;
    }
  }

  Spectrum out;
  out.window = window;
  out.sample_period = dt;
  out.n_averages = n_segments;
  out.resolution_bandwidth = 1.0 / (static_cast<double>(L) * dt);
  out.noise_bandwidth =
      out.resolution_bandwidth * static_cast<double>(L) * sumw2 / (sumw * sumw);
  out.frequency.resize(nb);
  out.psd.resize(nb);
  double total = 0;
  const double inv_nseg = 1.0 / static_cast<double>(n_segments);
  for (std::size_t k = 0; k < nb; ++k) {
    out.frequency[k] = static_cast<double>(k) * out.resolution_bandwidth;
    out.psd[k] = acc[k] * inv_nseg;
    total += out.psd[k] * out.resolution_bandwidth;
  }
  out.total_variance = total;
  return out;
}

// ---------------------------------------------------------------------------
// Spectral model
// ---------------------------------------------------------------------------

void spectral_model(const SpectralParams& p, const DerivedParams& d,
                    double white_reference, const std::vector<double>& freq_hz,
                    std::vector<double>* psd,
                    std::vector<std::array<double, 5>>* jacobian) {
  if (!(white_reference > 0)) {
    throw ConfigError("spectral_model: white_reference must be positive");
  }
  if (!psd) throw ConfigError("spectral_model: psd output is required");
  const std::size_t nf = freq_hz.size();
  psd->resize(nf);
  if (jacobian) jacobian->resize(nf);

  const std::complex<double> dl = d.sidebands.upper - d.sidebands.lower;
  const double pref = 0.5 * transduction_coefficient(d);  // band integral = pref (2n+1)

  const double n = p.occupation;
  const double g = p.gamma_tot;
  const double wp = p.omega_peak;
  const double W = p.white_level;
  const double C = p.dip_amplitude;
  const double gain = W / white_reference;
  const double half_g_sq = 0.25 * g * g;
  const double wp2 = wp * wp;

  for (std::size_t i = 0; i < nf; ++i) {
    const double omega = two_pi * freq_hz[i];
    const double um = omega - wp;
    const double up = omega + wp;
    const double lm = 1.0 / (um * um + half_g_sq);
    const double lp = 1.0 / (up * up + half_g_sq);
    const double lorsum = lm + lp;
    const double mech = pref * (2.0 * n + 1.0) * g * lorsum;

    // Interference structure: chi = wp^2 / (wp^2 - w^2 - i g w).
    const std::complex<double> D(wp2 - omega * omega, -g * omega);
    const std::complex<double> chi = wp2 / D;
    const double dip = -2.0 * std::real(dl * chi);

    (*psd)[i] = gain * (mech + C * dip) + W;

    if (jacobian) {
      const double dmech_dn = pref * 2.0 * g * lorsum;
      const double dlorsum_dg = -0.5 * g * (lm * lm + lp * lp);
      const double dmech_dg = pref * (2.0 * n + 1.0) * (lorsum + g * dlorsum_dg);
      const double dlorsum_dwp = 2.0 * um * lm * lm - 2.0 * up * lp * lp;
      const double dmech_dwp = pref * (2.0 * n + 1.0) * g * dlorsum_dwp;

      const std::complex<double> dchi_dg =
          std::complex<double>(0, omega) * chi * chi / wp2;
      const std::complex<double> dchi_dwp =
          2.0 * wp * std::complex<double>(-omega * omega, -g * omega) / (D * D);
      const double ddip_dg = -2.0 * std::real(dl * dchi_dg);
      const double ddip_dwp = -2.0 * std::real(dl * dchi_dwp);

      (*jacobian)[i] = {gain * dmech_dn, gain * (dmech_dg + C * ddip_dg),
                        gain * (dmech_dwp + C * ddip_dwp),
                        (mech + C * dip) / white_reference + 1.0, gain * dip};
    }
  }
}

// ---------------------------------------------------------------------------
// Spectrum fit
// ---------------------------------------------------------------------------

namespace {

struct BandData {
  std::vector<double> freq;
  Eigen::VectorXd y;
  Eigen::VectorXd sigma;
};

BandData select_band(const Spectrum& s, double f_lo, double f_hi) {
  BandData band;
  std::vector<double> yv, sv;
  const double rel = s.n_averages > 0
                         ? 1.0 / std::sqrt(static_cast<double>(s.n_averages))
                         : 1.0;
  for (std::size_t i = 0; i < s.frequency.size(); ++i) {
    const double f = s.frequency[i];
    if (f < f_lo || f > f_hi || f <= 0) continue;
    band.freq.push_back(f);
    yv.push_back(s.psd[i]);
    sv.push_back(std::max(s.psd[i] * rel, 1e-300));
  }
  band.y = Eigen::Map<const Eigen::VectorXd>(yv.data(), static_cast<Eigen::Index>(yv.size()));
  band.sigma = Eigen::Map<const Eigen::VectorXd>(sv.data(), static_cast<Eigen::Index>(sv.size()));
  return band;
}

// Fraction of the two-Lorentzian band integral captured by [f_lo, f_hi].
double capture_fraction(double gamma, double omega_peak, double f_lo, double f_hi) {
  const double wl = two_pi * f_lo, wh = two_pi * f_hi;
  auto piece = [&](double center) {
    return std::atan(2.0 * (wh - center) / gamma) - std::atan(2.0 * (wl - center) / gamma);
  };
  return (piece(omega_peak) + piece(-omega_peak)) / two_pi;
}

}  // namespace

SpectrumFitResult fit_spectrum(const Spectrum& s, const DerivedParams& d,
                               double white_reference, SpectrumFitMode mode,
                               double f_lo, double f_hi) {
  if (!(white_reference > 0)) {
    throw ConfigError("fit_spectrum: white_reference must be positive");
  }
  if (!(f_hi > f_lo)) throw ConfigError("fit_spectrum: empty fit band");
  BandData band = select_band(s, f_lo, f_hi);
  const Eigen::Index nbins = band.y.size();
  if (nbins < 12) throw ConfigError("fit_spectrum: fewer than 12 bins in the fit band");

  const double omega_t = d.config.trap.omega_t;
  const double c_t = transduction_coefficient(d);
  if (!(c_t > 0)) throw ConfigError("fit_spectrum: zero transduction (no coupling?)");
  const double rbw = s.resolution_bandwidth > 0
                         ? s.resolution_bandwidth
                         : (band.freq.size() > 1 ? band.freq[1] - band.freq[0] : 1.0);

  // --- Initial estimates -------------------------------------------------
  std::vector<double> sorted(band.y.data(), band.y.data() + nbins);
  std::sort(sorted.begin(), sorted.end());
  double w0 = median_of(std::vector<double>(
      sorted.begin(), sorted.begin() + std::max<std::size_t>(4, sorted.size() / 2)));
  if (!(w0 > 0)) w0 = std::max(1e-30, 0.1 * white_reference);

  Eigen::Index peak_idx = 0;
  band.y.maxCoeff(&peak_idx);
  const double f_peak = band.freq[static_cast<std::size_t>(peak_idx)];
  double wp0 = std::clamp(two_pi * f_peak, 0.9 * omega_t, 1.1 * omega_t);

  const double smax = band.y[peak_idx];
  const double half_level = w0 + 0.5 * (smax - w0);
  Eigen::Index klo = peak_idx, khi = peak_idx;
  while (klo > 0 && band.y[klo - 1] > half_level) --klo;
  while (khi + 1 < nbins && band.y[khi + 1] > half_level) ++khi;
  double g0 = two_pi * static_cast<double>(khi - klo + 1) * rbw;
  g0 = std::clamp(g0, 0.5 * two_pi * rbw, omega_t);

  double area0 = 0;
  for (Eigen::Index i = 0; i < nbins; ++i) {
    area0 += std::max(band.y[i] - w0, 0.0) * rbw;
  }
  const double gain0 = w0 / white_reference;
  double n_init = area0 / (gain0 * c_t *
                           std::max(capture_fraction(g0, wp0, f_lo, f_hi), 0.05)) -
                  0.5;
  n_init = std::clamp(n_init, 0.01, 1e9);

  // --- Model wrappers ----------------------------------------------------
  std::vector<double> model_psd;
  std::vector<std::array<double, 5>> model_jac;
  auto eval_direct = [&](const Eigen::VectorXd& p, Eigen::VectorXd& m,
                         Eigen::MatrixXd* jac) {
    SpectralParams sp{p[0], p[1], p[2], p[3], p[4]};
    spectral_model(sp, d, white_reference, band.freq, &model_psd,
                   jac ? &model_jac : nullptr);
    for (Eigen::Index i = 0; i < nbins; ++i) {
      m[i] = model_psd[static_cast<std::size_t>(i)];
      if (jac) {
        for (int a = 0; a < 5; ++a) {
          (*jac)(i, a) = model_jac[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)];
        }
      }
    }
  };

  // Bath reparameterization: n and gamma_tot from a thermal bath mixing at
  // gamma_m against the configured cavity rates.
  const double a_source = d.a_minus + d.lamb_dicke_sq * d.gamma_sc;
  auto eval_bath = [&](const Eigen::VectorXd& q, Eigen::VectorXd& m,
                       Eigen::MatrixXd* jac) {
    const double n_bath = q[0], gm = q[1];
    const double gtot = gm + d.gamma_c;
    if (!(gtot > 0)) {
      // Repel the optimizer from the unstable region.
      m.setConstant(1e30);
      if (jac) jac->setZero();
      return;
    }
    const double n = (a_source + gm * n_bath) / gtot;
    Eigen::VectorXd p(5);
    p << n, gtot, q[2], q[3], q[4];
    Eigen::MatrixXd jd;
    if (jac) jd.resize(nbins, 5);
    eval_direct(p, m, jac ? &jd : nullptr);
    if (jac) {
      const double dn_dnb = gm / gtot;
      const double dn_dgm = (n_bath - n) / gtot;
      for (Eigen::Index i = 0; i < nbins; ++i) {
        (*jac)(i, 0) = jd(i, 0) * dn_dnb;
        (*jac)(i, 1) = jd(i, 0) * dn_dgm + jd(i, 1);
        (*jac)(i, 2) = jd(i, 2);
        (*jac)(i, 3) = jd(i, 3);
        (*jac)(i, 4) = jd(i, 4);
      }
    }
  };

  // --- Run the fit ---------------------------------------------------------
  SpectrumFitResult out;
  FitResult fr;
  const double wp_lo = 0.9 * omega_t, wp_hi = 1.1 * omega_t;
  const double g_lo = 0.25 * two_pi * rbw, g_hi = 100.0 * omega_t;
  const double w_lo = 1e-9 * white_reference;

  if (mode == SpectrumFitMode::direct) {
    Eigen::VectorXd p0(5), lo(5), hi(5);
    p0 << n_init, g0, wp0, w0, 0.0;
    lo << 0.0, g_lo, wp_lo, w_lo, -kInf;
    hi << 1e12, g_hi, wp_hi, kInf, kInf;
    fr = levenberg_marquardt(eval_direct, band.y, band.sigma, p0, lo, hi);
    if (!fr.converged) {
      throw FitError("spectrum fit did not converge" + format_residual(fr.chi2, fr.dof));
    }
    out.occupation = fr.params[0];
    out.occupation_sigma = fr.uncertainties[0];
    out.gamma_tot = fr.params[1];
    out.gamma_tot_sigma = fr.uncertainties[1];
    out.omega_peak = fr.params[2];
    out.white_level = fr.params[3];
    out.white_sigma = fr.uncertainties[3];
    out.dip_amplitude = fr.params[4];
    out.dip_sigma = fr.uncertainties[4];
  } else {
    const double gm0 = std::max(g0 - d.gamma_c, 0.1 * g0);
    double nb0 = 1.0;
    if (gm0 > 0) {
      const double gtot0 = gm0 + d.gamma_c;
      nb0 = std::max((n_init * gtot0 - a_source) / gm0, 0.0);
    }
    Eigen::VectorXd q0(5), lo(5), hi(5);
    q0 << nb0, gm0, wp0, w0, 0.0;
    lo << 0.0, 0.0, wp_lo, w_lo, -kInf;
    hi << 1e12, g_hi, wp_hi, kInf, kInf;
    fr = levenberg_marquardt(eval_bath, band.y, band.sigma, q0, lo, hi);
    if (!fr.converged) {
      throw FitError("spectrum fit did not converge" + format_residual(fr.chi2, fr.dof));
    }
    const double n_bath = fr.params[0], gm = fr.params[1];
    const double gtot = gm + d.gamma_c;
    const double n = (a_source + gm * n_bath) / gtot;
    out.bath_occupation = n_bath;
    out.bath_occupation_sigma = fr.uncertainties[0];
    out.bath_rate = gm;
    out.bath_rate_sigma = fr.uncertainties[1];
    out.occupation = n;
    out.gamma_tot = gtot;
    out.gamma_tot_sigma = fr.uncertainties[1];
    out.omega_peak = fr.params[2];
    out.white_level = fr.params[3];
    out.white_sigma = fr.uncertainties[3];
    out.dip_amplitude = fr.params[4];
    out.dip_sigma = fr.uncertainties[4];
    // Delta-method uncertainty on the mapped occupation.
    const double dn_dnb = gm / gtot;
    const double dn_dgm = (n_bath - n) / gtot;
    const double var = dn_dnb * dn_dnb * fr.covariance(0, 0) +
                       dn_dgm * dn_dgm * fr.covariance(1, 1) +
                       2.0 * dn_dnb * dn_dgm * fr.covariance(0, 1);
    out.occupation_sigma = var > 0 ? std::sqrt(var) : 0.0;
  }

  out.gain = out.white_level / white_reference;
  out.chi2 = fr.chi2;
  out.dof = fr.dof;
  out.converged = fr.converged;
  out.at_bound = fr.at_bound;
  out.message = fr.message;

  // --- Area estimate -------------------------------------------------------
  {
    SpectralParams bg{0.0, out.gamma_tot, out.omega_peak, out.white_level,
                      out.dip_amplitude};
    // Zero-occupation model still carries the half-quantum band; subtract the
    // pure background instead: white + dip only.
    std::vector<double> bg_psd;
    spectral_model(bg, d, white_reference, band.freq, &bg_psd, nullptr);
    const double half_band = 0.5 * out.gain * c_t *
                             capture_fraction(out.gamma_tot, out.omega_peak, f_lo, f_hi);
    double area = 0;
    for (Eigen::Index i = 0; i < nbins; ++i) {
      area += (band.y[i] - bg_psd[static_cast<std::size_t>(i)]) * rbw;
    }
    area += half_band;  // bg_psd included the n = 0 sidebands; restore them
    const double cap = capture_fraction(out.gamma_tot, out.omega_peak, f_lo, f_hi);
    out.occupation_area =
        cap > 0.01 ? area / (out.gain * c_t * cap) - 0.5 : 0.0;
  }

  // --- Profile-likelihood interval on the occupation ----------------------
  if (mode == SpectrumFitMode::direct) {
    const double chi2_min = fr.chi2;
    auto profile_chi2 = [&](double n_fixed) {
      auto eval4 = [&](const Eigen::VectorXd& p4, Eigen::VectorXd& m,
                       Eigen::MatrixXd* jac) {
        Eigen::VectorXd p(5);
        p << n_fixed, p4[0], p4[1], p4[2], p4[3];
        Eigen::MatrixXd j5;
        if (jac) j5.resize(nbins, 5);
        eval_direct(p, m, jac ? &j5 : nullptr);
        if (jac) {
          for (Eigen::Index i = 0; i < nbins; ++i) {
            for (int a = 0; a < 4; ++a) (*jac)(i, a) = j5(i, a + 1);
          }
        }
      };
      Eigen::VectorXd p4(4), lo4(4), hi4(4);
      p4 << out.gamma_tot, out.omega_peak, out.white_level, out.dip_amplitude;
      lo4 << g_lo, wp_lo, w_lo, -kInf;
      hi4 << g_hi, wp_hi, kInf, kInf;
      FitOptions po;
      po.max_iterations = 120;
      const FitResult pr = levenberg_marquardt(eval4, band.y, band.sigma, p4, lo4, hi4, po);
      return pr.chi2;
    };

    double sig = out.occupation_sigma;
    if (!(sig > 0) || !std::isfinite(sig)) sig = 0.3 * out.occupation + 0.01;
    auto cross = [&](int dir) {
      double lo_n = out.occupation;
      double hi_n = out.occupation;
      double step = 0.5 * sig;
      bool bracketed = false;
      for (int it = 0; it < 40 && !bracketed; ++it) {
        hi_n = out.occupation + dir * step;
        if (dir < 0 && hi_n <= 0) {
          if (profile_chi2(0.0) - chi2_min < 1.0) return 0.0;  // interval hits zero
          hi_n = 0.0;
          bracketed = true;
          break;
        }
        if (profile_chi2(hi_n) - chi2_min >= 1.0) {
          bracketed = true;
        } else {
          lo_n = hi_n;
          step *= 1.8;
        }
      }
      if (!bracketed) return out.occupation + dir * 40.0 * sig;
      for (int it = 0; it < 30; ++it) {
        const double mid = 0.5 * (lo_n + hi_n);
        if (profile_chi2(mid) - chi2_min >= 1.0) {
          hi_n = mid;
        } else {
          lo_n = mid;
        }
        if (std::abs(hi_n - lo_n) < 1e-3 * sig) break;
      }
      return 0.5 * (lo_n + hi_n);
    };
    out.occupation_hi = cross(+1);
    out.occupation_lo = out.occupation > 0 ? cross(-1) : 0.0;
  } else {
    out.occupation_lo = std::max(out.occupation - out.occupation_sigma, 0.0);
    out.occupation_hi = out.occupation + out.occupation_sigma;
  }

  return out;
}

// ---------------------------------------------------------------------------
// Rate-vs-scattering regression
// ---------------------------------------------------------------------------

RateScalingFit fit_rate_vs_scattering(const std::vector<RateScalingPoint>& points,
                                      double eta) {
  if (points.size() < 3) {
    throw ConfigError("fit_rate_vs_scattering: need at least 3 points");
  }
  if (!(eta > 0)) throw ConfigError("fit_rate_vs_scattering: eta must be positive");
  bool any_sigma = false, all_sigma = true;
  for (const auto& p : points) {
    if (p.sigma > 0) {
      any_sigma = true;
    } else {
      all_sigma = false;
    }
  }
  if (any_sigma && !all_sigma) {
    throw ConfigError("fit_rate_vs_scattering: either all or no uncertainties");
  }

  double sw = 0, swx = 0, swy = 0, swxx = 0, swxy = 0;
  for (const auto& p : points) {
    const double x = eta * p.gamma_sc;
    const double w = all_sigma ? 1.0 / (p.sigma * p.sigma) : 1.0;
    sw += w;
    swx += w * x;
    swy += w * p.gamma_exp;
    swxx += w * x * x;
    swxy += w * x * p.gamma_exp;
  }
  const double det = sw * swxx - swx * swx;
  if (!(det > 0)) throw ConfigError("fit_rate_vs_scattering: degenerate abscissa");

  RateScalingFit out;
  out.slope = (sw * swxy - swx * swy) / det;
  out.intercept = (swxx * swy - swx * swxy) / det;
  out.dof = static_cast<int>(points.size()) - 2;
  double chi2 = 0;
  for (const auto& p : points) {
    const double x = eta * p.gamma_sc;
    const double w = all_sigma ? 1.0 / (p.sigma * p.sigma) : 1.0;
    const double r = p.gamma_exp - (out.slope * x + out.intercept);
    chi2 += w * r * r;
  }
  out.chi2 = chi2;
  double var_scale = 1.0;
  if (!all_sigma && out.dof > 0) var_scale = chi2 / out.dof;
  out.slope_sigma = std::sqrt(var_scale * sw / det);
  out.intercept_sigma = std::sqrt(var_scale * swxx / det);
  return out;
}

ProportionalFit fit_proportional(const std::vector<double>& x,
                                 const std::vector<double>& y,
                                 const std::vector<double>& sigma) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ConfigError("fit_proportional: need at least 2 matching points");
  }
  if (!sigma.empty() && sigma.size() != x.size()) {
    throw ConfigError("fit_proportional: sigma size mismatch");
  }
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = sigma.empty() ? 1.0 : 1.0 / (sigma[i] * sigma[i]);
    sxx += w * x[i] * x[i];
    sxy += w * x[i] * y[i];
  }
  if (!(sxx > 0)) throw ConfigError("fit_proportional: degenerate abscissa");
  ProportionalFit out;
  out.coefficient = sxy / sxx;
  out.dof = static_cast<int>(x.size()) - 1;
  double chi2 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = sigma.empty() ? 1.0 : 1.0 / (sigma[i] * sigma[i]);
    const double r = y[i] - out.coefficient * x[i];
    chi2 += w * r * r;
  }
  out.chi2 = chi2;
  double var_scale = 1.0;
  if (sigma.empty() && out.dof > 0) var_scale = chi2 / out.dof;
  out.coefficient_sigma = std::sqrt(var_scale / sxx);
  return out;
}

}  // namespace cavsim
