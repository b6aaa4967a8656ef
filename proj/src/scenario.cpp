#include "cavsim/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "cavsim/constants.hpp"
#include "cavsim/photodetect.hpp"
#include "cavsim/random.hpp"
#include "cavsim/traceio.hpp"

namespace cavsim::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Small local helpers
// ---------------------------------------------------------------------------

namespace {

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void write_csv(const fs::path& file, const std::string& header,
               const std::vector<std::vector<double>>& rows) {
  std::ofstream out(file);
  if (!out) throw ConfigError("cannot write " + file.string());
  out << header << "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ",";
      out << format_number(row[i]);
    }
    out << "\n";
  }
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file);
  if (!out) throw ConfigError("cannot write " + file.string());
  out << text;
}

constexpr const char* kPlotStub = R"PY(#!/usr/bin/env python3
"""Render the CSV tables emitted alongside this script.

Looks for known table names in its own directory and writes one PNG per
figure-style table. Requires matplotlib and numpy.
"""
import csv
import os
import sys


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    cols = {name: [float(r[i]) for r in data] for i, name in enumerate(header)}
    return cols


def main():
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib not available; skipping plots", file=sys.stderr)
        return 0

    for name in sorted(os.listdir(here)):
        path = os.path.join(here, name)
        if not name.endswith(".csv"):
            continue
        cols = read_csv(path)
        stem = os.path.splitext(name)[0]
        fig, ax = plt.subplots(figsize=(6, 4))
        if name.startswith("occupation_"):
            ax.errorbar([t * 1e6 for t in cols["time"]], cols["occupation"],
                        yerr=cols.get("occupation_se"), fmt=".", ms=3)
            if "fit" in cols:
                ax.plot([t * 1e6 for t in cols["time"]], cols["fit"], "r-")
            ax.set_xlabel("time (us)")
            ax.set_ylabel("mode occupation")
            ax.set_yscale("log")
        elif name.startswith("spectrum_"):
            f_khz = [f * 1e-3 for f in cols["frequency"]]
            ax.plot(f_khz, cols["psd"], ".", ms=3)
            if "model" in cols:
                ax.plot(f_khz, cols["model"], "r-")
            ax.set_xlabel("frequency (kHz)")
            ax.set_ylabel("PSD (1/Hz)")
        elif name.startswith("rate_points"):
            ax.errorbar(cols["eta_gamma_sc"], cols["gamma_exp"],
                        yerr=cols.get("gamma_exp_sigma"), fmt="o")
            ax.set_xlabel("eta * gamma_sc (1/s)")
            ax.set_ylabel("gamma_exp (1/s)")
        elif name.startswith("decay_fits"):
            ax.errorbar(cols["gamma_sc"], cols["gamma_exp"],
                        yerr=cols.get("gamma_exp_sigma"), fmt="o", label="measured")
            ax.plot(cols["gamma_sc"], cols["gamma_pred"], "x", label="predicted")
            ax.set_xlabel("gamma_sc (1/s)")
            ax.set_ylabel("decay rate (1/s)")
            ax.legend()
        elif name.startswith("sweep") or name.startswith("limits"):
            keys = [k for k in cols if k != "x"]
            for k in keys:
                ax.plot(cols.get("x", range(len(cols[k]))), cols[k], label=k)
            ax.legend(fontsize=6)
        else:
            plt.close(fig)
            continue
        fig.tight_layout()
        fig.savefig(os.path.join(here, stem + ".png"), dpi=120)
        plt.close(fig)
        print("wrote", stem + ".png")
    return 0


if __name__ == "__main__":
    sys.exit(main())
)PY";

TimeTrace trim_head(const TimeTrace& trace, double skip_seconds) {
  if (skip_seconds <= 0) return trace;
  const std::size_t drop =
      static_cast<std::size_t>(std::floor(skip_seconds / trace.dt + 0.5));
  if (drop >= trace.values.size()) {
    throw ConfigError("skip_initial longer than the trace");
  }
  TimeTrace out = trace;
  out.values.assign(trace.values.begin() + static_cast<std::ptrdiff_t>(drop),
                    trace.values.end());
  out.t0 = trace.t0 + static_cast<double>(drop) * trace.dt;
  return out;
}

// Detected counts for one trajectory under the scenario's detector settings.
PhotocurrentTrace detect_trace(const io::ScenarioConfig& sc, const Trajectory& traj,
                               std::size_t index) {
  TimeTrace rate = trim_head(traj.rate_trace(), sc.analysis.skip_initial);
  PhotocurrentTrace counts =
      detect(rate, sc.detector, derive_seed(sc.sim.seed, "detect", index));
  if (sc.detector.electronic_noise_psd != 0) {
    counts = add_electronic_noise(counts, sc.detector,
                                  derive_seed(sc.sim.seed, "elec", index));
  }
  return counts;
}

}  // namespace

// ---------------------------------------------------------------------------
// Output root
// ---------------------------------------------------------------------------

fs::path resolve_out_root(const std::string& cli_out) {
  if (!cli_out.empty()) return fs::path(cli_out);
  if (const char* env = std::getenv("CAVSIM_OUT_ROOT"); env && *env) {
    return fs::path(env);
  }
  return fs::path("cavsim-out");
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

double photons_for_gamma_sc(const io::ScenarioConfig& sc, double gamma_sc) {
  const auto& a = sc.physics.atom;
  const auto& c = sc.physics.cavity;
  const double g_sq = 0.25 * c.eta * c.kappa * a.linewidth;
  const double delta = sc.physics.probe.delta_atom;
  return gamma_sc * delta * delta / (a.linewidth * g_sq);
}

void set_drive_for_gamma_sc(io::ScenarioConfig& sc, double gamma_sc) {
  sc.physics.probe.mean_photon_number = photons_for_gamma_sc(sc, gamma_sc);
  sc.physics.probe.mean_detected_rate.reset();
}

const std::vector<double>& fig2_scattering_rates() {
  static const std::vector<double> rates{1.1e5, 2.3e5, 3.4e5, 6.4e5};
  return rates;
}

const std::vector<double>& fig3_atom_numbers() {
  static const std::vector<double> ns{700, 2800, 8000};
  return ns;
}

// Each ensemble is swept over a decade of scattering rate, capped where the
// collective coupling 2 g approaches kappa/2: beyond that the dispersive
// model's cavity and mechanical modes hybridize and the decay outruns the
// adiabatic rate gamma_c that the linear regression assumes.  gamma_c scales
// with N * Gamma_sc, so the larger ensembles are probed at weaker drives.
std::vector<double> fig3_scattering_rates(double atom_number) {
  if (atom_number < 1500) return {0.65e5, 1.5e5, 3.0e5, 6.5e5};
  if (atom_number < 5000) return {0.2e5, 0.45e5, 0.9e5, 2.0e5};
  return {0.1e5, 0.25e5, 0.5e5, 1.0e5};
}

namespace {

io::ScenarioConfig decay_scenario_base() {
  io::ScenarioConfig sc;
  sc.physics.probe.delta_atom = two_pi * 140e6;
  sc.physics.probe.delta_cavity = -0.5 * sc.physics.cavity.kappa;
  sc.physics.trap.gamma_m = 1.6e5;
  sc.physics.trap.n_bath = 3.1;
  sc.sim.dt = 2e-9;
  sc.sim.duration = 30e-6;
  sc.sim.record_stride = 25;  // 50 ns samples
  // Saturate the heating-phase oscillation once the cavity shift reaches half
  // a linewidth (the sideband-inversion point of the fringe).
  sc.sim.coupling_cap_kappa = 0.5;
  sc.initial.thermal_occupation = 3.1;
  sc.detector.bin_width = 100e-9;
  sc.detector.electronic_noise_psd = 0;
  sc.analysis.variance_window = 2e-6;
  sc.analysis.variance_stride = 1;
  sc.analysis.subtract_shot_bias = true;
  sc.analysis.decay = true;
  sc.analysis.spectrum = false;
  return sc;
}

// Heating prelude shared by the decay presets: a drive at the mirrored
// detuning amplifies the switch-on oscillation, so every dataset enters its
// cooling phase from the same large, phase-locked collective oscillation
// before the probe moves to the power and detuning under study.  The heating
// power is chosen so the oscillation reaches n_start right at the switch;
// keep n_start inside the intensity readout's linear range (the detuning
// swing G x sweeps the cavity line and the transduced variance folds over
// past |G x| ~ kappa/2, i.e. a few hundred quanta here) so the fitted decay
// measures the mode and not the readout saturation.
void add_heating_prelude(io::ScenarioConfig& sc, double n_start = 250) {
  sc.drive.delta_initial = -sc.physics.probe.delta_cavity;
  sc.drive.t_switch = 10e-6;
  sc.sim.duration = sc.drive.t_switch + 30e-6;
  sc.analysis.skip_initial = sc.drive.t_switch;  // analyze the cooling side

  // Suddenly turning the drive on displaces the trap equilibrium, leaving a
  // deterministic oscillation of (G x_zpf n_photon / omega_t)^2 quanta that
  // the anti-damped phase then amplifies as exp[(|gamma_c| - gamma_m) t].
  // Both factors grow monotonically with power: bisect for the power whose
  // amplified oscillation hits n_start at t_switch.
  io::ScenarioConfig heat = sc;
  heat.physics.probe.delta_cavity = *sc.drive.delta_initial;
  auto occupation_at_switch = [&heat, &sc](double gamma_sc) {
    heat.physics.probe.mean_photon_number = photons_for_gamma_sc(heat, gamma_sc);
    heat.physics.probe.mean_detected_rate.reset();
    const DerivedParams hd = derive_params(heat.physics);
    const double kick = hd.opto_coupling * hd.x_zpf * hd.mean_photon /
                        heat.physics.trap.omega_t;
    const double growth = -hd.gamma_c - heat.physics.trap.gamma_m;
    return kick * kick * std::exp(growth * sc.drive.t_switch);
  };
  double lo = 1e2, hi = 1e7;
  for (int iter = 0; iter < 60; ++iter) {
    const double mid = std::sqrt(lo * hi);
    (occupation_at_switch(mid) < n_start ? lo : hi) = mid;
  }
  sc.drive.photon_initial = photons_for_gamma_sc(sc, std::sqrt(lo * hi));

  const DerivedParams d = derive_params(sc.physics);
  const double amp = d.opto_coupling * d.x_zpf * (*sc.drive.photon_initial) /
                     sc.physics.trap.omega_t;
  sc.initial.coherent_quanta = amp * amp;
  sc.initial.coherent_phase = 0;
}

std::string drive_tag(double gamma_sc) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "s%03.0f", gamma_sc / 1e3);
  return buf;
}

// Start the cooling phase directly from a known oscillation amplitude.
// Simulating the heating sweep instead hands the fit an ensemble of
// amplified thermal amplitudes -- exponentially distributed, so a sizable
// fraction of traces starts far above n_start -- and averaging the concave
// variance readout (which folds over once the detuning swing G x nears
// kappa/2, a few hundred quanta here) across that spread suppresses the top
// of the mean decay curve and biases the fitted rate low.  A fixed starting
// amplitude with per-trace random phase keeps the ensemble mean a faithful
// image of the single-mode decay while still averaging the window-phase
// ripple of the variance estimator.
void prepare_cooling_start(io::ScenarioConfig& sc, double n_start = 250) {
  sc.initial.coherent_quanta = n_start;
  sc.initial.random_phase = true;
}

}  // namespace

io::ScenarioConfig fig2_scenario(double gamma_sc_target, std::size_t traces) {
  io::ScenarioConfig sc = decay_scenario_base();
  sc.name = "fig2_" + drive_tag(gamma_sc_target);
  sc.physics.ensemble.atom_number = 2800;
  set_drive_for_gamma_sc(sc, gamma_sc_target);
  prepare_cooling_start(sc);
  sc.traces = traces;
  return sc;
}

io::ScenarioConfig heat_then_cool_scenario(double gamma_sc_target,
                                           std::size_t traces) {
  io::ScenarioConfig sc = fig2_scenario(gamma_sc_target, traces);
  sc.name = "heat_" + drive_tag(gamma_sc_target);
  // The averaged-trace method needs every trace to oscillate in phase, so
  // grow the oscillation deterministically instead of preparing it directly.
  sc.initial.coherent_quanta = 0;
  sc.initial.random_phase = false;
  add_heating_prelude(sc);
  return sc;
}

io::ScenarioConfig fig3_scenario(double atom_number, double gamma_sc_target,
                                 std::size_t traces) {
  io::ScenarioConfig sc = decay_scenario_base();
  char buf[48];
  std::snprintf(buf, sizeof(buf), "fig3_n%04.0f_%s", atom_number,
                drive_tag(gamma_sc_target).c_str());
  sc.name = buf;
  sc.physics.ensemble.atom_number = atom_number;
  // Each ensemble size is probed at its own detuning from atomic resonance.
  if (atom_number < 1500) {
    sc.physics.probe.delta_atom = two_pi * 70e6;
  } else if (atom_number < 5000) {
    sc.physics.probe.delta_atom = two_pi * 140e6;
  } else {
    sc.physics.probe.delta_atom = two_pi * 270e6;
  }
  set_drive_for_gamma_sc(sc, gamma_sc_target);
  prepare_cooling_start(sc);
  sc.traces = traces;
  return sc;
}

io::ScenarioConfig fig4_scenario(bool heating, std::size_t traces) {
  io::ScenarioConfig sc;
  sc.name = heating ? "fig4_heat" : "fig4_cool";
  sc.physics.ensemble.atom_number = 450;
  sc.physics.probe.delta_atom = two_pi * 70e6;
  sc.physics.probe.delta_cavity =
      (heating ? 0.5 : -0.5) * sc.physics.cavity.kappa;
  sc.physics.probe.mean_detected_rate = 1.2e9;
  sc.physics.probe.mean_photon_number.reset();
  sc.physics.trap.gamma_m = heating ? 4.8e5 : 2.6e5;
  sc.physics.trap.n_bath = 3.1;
  sc.sim.dt = 5e-9;
  sc.sim.duration = 440e-6;
  sc.sim.record_stride = 32;  // 160 ns samples
  sc.initial.thermal_occupation = heating ? 8.4 : 1.7;
  sc.detector.bin_width = 160e-9;
  sc.detector.electronic_noise_psd = -1;  // representative electronics: 2x shot
  sc.analysis.decay = false;
  sc.analysis.spectrum = true;
  sc.analysis.skip_initial = 40e-6;
  sc.analysis.psd_segment = 512;
  sc.analysis.psd_window = PsdWindow::hann;
  sc.analysis.fit_mode = SpectrumFitMode::direct;
  sc.traces = traces;
  return sc;
}

std::vector<io::ScenarioConfig> preset_scenarios(const std::string& name) {
  std::vector<io::ScenarioConfig> out;
  if (name == "fig2") {
    for (double gsc : fig2_scattering_rates()) out.push_back(fig2_scenario(gsc));
  } else if (name == "fig3") {
    for (double n : fig3_atom_numbers()) {
      for (double gsc : fig3_scattering_rates(n)) {
        out.push_back(fig3_scenario(n, gsc));
      }
    }
  } else if (name == "fig4b" || name == "fig4") {
    out.push_back(fig4_scenario(false));
    out.push_back(fig4_scenario(true));
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected fig2, fig3, or fig4b)");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipelines
// ---------------------------------------------------------------------------

SimulatedScenario run_simulation(const io::ScenarioConfig& sc, int threads) {
  SimulatedScenario out;
  out.scenario = sc;
  out.derived = derive_params(sc.physics);
  const auto start = std::chrono::steady_clock::now();
  out.trajectories = simulate_ensemble(sc.sim, sc.physics, sc.noise, sc.drive,
                                       sc.initial, sc.traces, threads);
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

DecayAnalysis analyze_decay(const SimulatedScenario& run) {
  const io::ScenarioConfig& sc = run.scenario;
  const DerivedParams& d = run.derived;
  if (run.trajectories.empty()) throw ConfigError("analyze_decay: no trajectories");
  for (const Trajectory& traj : run.trajectories) {
    if (traj.unstable) {
      throw InstabilityError("trajectory overflow in scenario " + sc.name);
    }
  }

  const double detected = sc.detector.quantum_efficiency * d.mean_rate;
  double var_bg =
      resolved_electronic_psd(sc.detector, detected) / (2.0 * sc.detector.bin_width);
  if (!sc.analysis.subtract_shot_bias) {
    var_bg += 1.0 / (detected * sc.detector.bin_width);
  }
  const LangevinSetup setup =
      compute_langevin_setup(sc.sim, d, sc.noise, sc.drive);
  const double rate_dt = run.trajectories.front().dt;
  const double window_eff =  // realized window: whole bins, as sliding_variance rounds
      std::max<double>(4, std::llround(sc.analysis.variance_window /
                                       sc.detector.bin_width)) *
      sc.detector.bin_width;
  var_bg += phase_noise_variance(d, setup.phase_sigma, setup.phase_tau, rate_dt,
                                 sc.detector.bin_width, window_eff);
  // What the binned, window-mean-removed estimator sees of the trap tone.
  const double omega_t = sc.physics.trap.omega_t;
  const double tone_pass =
      tone_binning_attenuation(omega_t, rate_dt, sc.detector.bin_width) *
      (1.0 - tone_binning_attenuation(omega_t, sc.detector.bin_width, window_eff));
  const double c_t = transduction_coefficient(d) * tone_pass;

  // Average the window variances across traces before converting to
  // occupation: applying the zero-clipped estimator per trace would bias the
  // tail upward once single-trace noise exceeds the equilibrium signal.
  std::vector<std::vector<double>> per_trace;
  VarianceSeries mean_vs;
  for (std::size_t i = 0; i < run.trajectories.size(); ++i) {
    const PhotocurrentTrace counts = detect_trace(sc, run.trajectories[i], i);
    VarianceSeries vs =
        sliding_variance(counts.counts, sc.analysis.variance_window,
                         sc.analysis.variance_stride, sc.analysis.subtract_shot_bias);
    if (per_trace.empty()) {
      mean_vs.time = vs.time;
      mean_vs.window = vs.window;
      mean_vs.mean_counts = 0;
    } else if (vs.variance.size() != mean_vs.time.size()) {
      throw ConfigError("analyze_decay: inconsistent series lengths");
    }
    mean_vs.mean_counts += vs.mean_counts;
    per_trace.push_back(std::move(vs.variance));
  }

  const std::size_t n_tr = per_trace.size();
  const std::size_t n_pt = mean_vs.time.size();
  mean_vs.mean_counts /= static_cast<double>(n_tr);
  mean_vs.variance.resize(n_pt);
  std::vector<double> var_se(n_pt, 0.0);
  for (std::size_t j = 0; j < n_pt; ++j) {
    double s = 0;
    for (const auto& tr : per_trace) s += tr[j];
    const double m = s / static_cast<double>(n_tr);
    double ss = 0;
    for (const auto& tr : per_trace) ss += (tr[j] - m) * (tr[j] - m);
    mean_vs.variance[j] = m;
    var_se[j] = n_tr > 1 ? std::sqrt(ss / static_cast<double>(n_tr - 1) /
                                     static_cast<double>(n_tr))
                         : 0.0;
  }

  const OccupationSeries os = occupation_from_variance(mean_vs, c_t, var_bg);
  DecayAnalysis out;
  out.time = os.time;
  out.occupation = os.occupation;
  out.occupation_se.resize(n_pt);
  for (std::size_t j = 0; j < n_pt; ++j) out.occupation_se[j] = var_se[j] / c_t;

  // Fit the unclipped affine map of the mean variance so noise around zero
  // stays symmetric (the leading skip_initial stretch was already trimmed
  // from the traces before detection).
  std::vector<double> y_all(n_pt);
  for (std::size_t j = 0; j < n_pt; ++j) {
    y_all[j] = (mean_vs.variance[j] - var_bg) / c_t - 0.5;
  }
  // Above ~200 quanta the fringe response flattens and the variance readout
  // compresses the oscillation, so start the fit once the (lightly smoothed)
  // series has decayed into the linear-transduction regime.
  std::size_t j0 = 0;
  if (const double gate = sc.analysis.fit_gate_occupation; gate > 0) {
    for (; j0 + 1 < n_pt; ++j0) {
      double s = 0;
      std::size_t cnt = 0;
      for (std::size_t k = j0; k < std::min(n_pt, j0 + 9); ++k, ++cnt) s += y_all[k];
      if (s / static_cast<double>(cnt) <= gate) break;
    }
  }
  std::vector<double> t_fit(os.time.begin() + static_cast<std::ptrdiff_t>(j0),
                            os.time.end());
  std::vector<double> y_fit(y_all.begin() + static_cast<std::ptrdiff_t>(j0),
                            y_all.end());
  // The window noise is strongly heteroscedastic: a counting-noise floor of
  // order 1/(counts-per-bin * c_T) quanta plus thermal amplitude scatter
  // proportional to the signal itself. Weighting with the raw per-window
  // ensemble SE would be unstable at few traces (chi^2 noise on the SE), so
  // smooth it with the two-parameter model se^2 = p0 + p1*y^2 before use.
  std::vector<double> sigma_fit;
  if (n_tr > 1) {
    double s11 = 0, s1x = 0, sxx = 0, s1z = 0, sxz = 0;
    for (std::size_t j = 0; j < n_pt; ++j) {
      const double x = std::max(y_all[j], 0.0) * std::max(y_all[j], 0.0);
      const double z = (var_se[j] / c_t) * (var_se[j] / c_t);
      s11 += 1;
      s1x += x;
      sxx += x * x;
      s1z += z;
      sxz += x * z;
    }
    const double det = s11 * sxx - s1x * s1x;
    double p0 = s1z / s11, p1 = 0;
    if (std::abs(det) > 1e-30 * s11 * sxx) {
      p0 = (sxx * s1z - s1x * sxz) / det;
      p1 = (s11 * sxz - s1x * s1z) / det;
    }
    p1 = std::max(p1, 0.0);
    p0 = std::max(p0, 1e-6 * (s1z / s11 + p1 * s1x / s11));
    sigma_fit.resize(y_fit.size());
    for (std::size_t j = 0; j < y_fit.size(); ++j) {
      sigma_fit[j] =
          std::sqrt(p0 + p1 * std::max(y_fit[j], 0.0) * std::max(y_fit[j], 0.0));
    }
  }
  out.fit = fit_exponential_decay(t_fit, y_fit, sigma_fit);
  // Sliding windows at stride < window length share bins, so residuals are
  // correlated and plain least-squares errors are optimistic by roughly the
  // square root of the overlap factor.
  const double bins_per_window =
      std::max(1.0, mean_vs.window / sc.detector.bin_width);
  const double overlap =
      std::max(1.0, bins_per_window / static_cast<double>(sc.analysis.variance_stride));
  const double se_scale = std::sqrt(overlap);
  out.fit.rate_sigma *= se_scale;
  out.fit.amplitude_sigma *= se_scale;
  out.fit.asymptote_sigma *= se_scale;
  out.gamma_sc = d.gamma_sc;
  out.gamma_c = d.gamma_c;
  out.gamma_pred = d.gamma_c + sc.physics.trap.gamma_m;
  out.clipped_fraction = os.clipped_fraction;
  return out;
}

SpectrumAnalysis analyze_spectrum(const SimulatedScenario& run) {
  const io::ScenarioConfig& sc = run.scenario;
  const DerivedParams& d = run.derived;
  if (run.trajectories.empty()) throw ConfigError("analyze_spectrum: no trajectories");
  for (const Trajectory& traj : run.trajectories) {
    if (traj.unstable) {
      throw InstabilityError("trajectory overflow in scenario " + sc.name);
    }
  }

  std::vector<TimeTrace> counts;
  counts.reserve(run.trajectories.size());
  for (std::size_t i = 0; i < run.trajectories.size(); ++i) {
    counts.push_back(detect_trace(sc, run.trajectories[i], i).counts);
  }

  SpectrumAnalysis out;
  out.spectrum = welch_psd(counts, sc.analysis.psd_segment, sc.analysis.psd_window,
                           /*fractional=*/true);
  out.white_reference = background_white_level(sc.detector, d.mean_rate);

  const double f_t = sc.physics.trap.omega_t / two_pi;
  const double nyquist = 0.5 / out.spectrum.sample_period;
  double f_lo = sc.analysis.fit_band_lo > 0
                    ? sc.analysis.fit_band_lo
                    : std::max(3.0 * out.spectrum.resolution_bandwidth, 0.15 * f_t);
  double f_hi = sc.analysis.fit_band_hi > 0 ? sc.analysis.fit_band_hi
                                            : std::min(1.85 * f_t, 0.92 * nyquist);
  out.fit = fit_spectrum(out.spectrum, d, out.white_reference, sc.analysis.fit_mode,
                         f_lo, f_hi);

  SpectralParams fitted{out.fit.occupation, out.fit.gamma_tot, out.fit.omega_peak,
                        out.fit.white_level, out.fit.dip_amplitude};
  spectral_model(fitted, d, out.white_reference, out.spectrum.frequency,
                 &out.model_psd, nullptr);

  try {
    out.predicted_occupation = equilibrium_occupation(d, sc.noise.recoil_factor);
  } catch (const InstabilityError&) {
    out.predicted_occupation = -1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifests and file emission
// ---------------------------------------------------------------------------

void write_manifest(const fs::path& dir, const json& manifest) {
  const fs::path tmp = dir / "manifest.json.tmp";
  const fs::path final_path = dir / "manifest.json";
  {
    std::ofstream out(tmp);
    if (!out) throw ConfigError("cannot write " + tmp.string());
    out << manifest.dump(2) << "\n";
  }
  fs::rename(tmp, final_path);
}

namespace {

json decay_record(const DecayAnalysis& a, const std::string& name,
                  double atom_number) {
  return json{{"scenario", name},
              {"atom_number", atom_number},
              {"gamma_sc", a.gamma_sc},
              {"gamma_c", a.gamma_c},
              {"gamma_pred", a.gamma_pred},
              {"gamma_exp", a.fit.rate},
              {"gamma_exp_sigma", a.fit.rate_sigma},
              {"amplitude", a.fit.amplitude},
              {"asymptote", a.fit.asymptote},
              {"chi2", a.fit.chi2},
              {"dof", a.fit.dof},
              {"clipped_fraction", a.clipped_fraction}};
}

json spectrum_record(const SpectrumAnalysis& a, const std::string& name) {
  return json{{"scenario", name},
              {"occupation", a.fit.occupation},
              {"occupation_sigma", a.fit.occupation_sigma},
              {"occupation_lo", a.fit.occupation_lo},
              {"occupation_hi", a.fit.occupation_hi},
              {"occupation_area", a.fit.occupation_area},
              {"predicted_occupation", a.predicted_occupation},
              {"gamma_tot", a.fit.gamma_tot},
              {"gamma_tot_sigma", a.fit.gamma_tot_sigma},
              {"omega_peak", a.fit.omega_peak},
              {"white_level", a.fit.white_level},
              {"white_reference", a.white_reference},
              {"gain", a.fit.gain},
              {"dip_amplitude", a.fit.dip_amplitude},
              {"dip_sigma", a.fit.dip_sigma},
              {"chi2", a.fit.chi2},
              {"dof", a.fit.dof}};
}

void write_decay_csv(const fs::path& dir, const std::string& name,
                     const DecayAnalysis& a, std::vector<std::string>& files) {
  std::vector<std::vector<double>> rows;
  rows.reserve(a.time.size());
  for (std::size_t j = 0; j < a.time.size(); ++j) {
    const double model =
        a.fit.amplitude * std::exp(-a.fit.rate * (a.time[j] - a.time.front())) +
        a.fit.asymptote;
    rows.push_back({a.time[j], a.occupation[j], a.occupation_se[j], model});
  }
  const std::string file = "occupation_" + name + ".csv";
  write_csv(dir / file, "time,occupation,occupation_se,fit", rows);
  files.push_back(file);
}

void write_spectrum_csv(const fs::path& dir, const std::string& name,
                        const SpectrumAnalysis& a, std::vector<std::string>& files) {
  std::vector<std::vector<double>> rows;
  rows.reserve(a.spectrum.frequency.size());
  for (std::size_t j = 0; j < a.spectrum.frequency.size(); ++j) {
    rows.push_back({a.spectrum.frequency[j], a.spectrum.psd[j], a.model_psd[j]});
  }
  const std::string file = "spectrum_" + name + ".csv";
  write_csv(dir / file, "frequency,psd,model", rows);
  files.push_back(file);
}

json base_manifest(const std::string& command) {
  return json{{"command", command},
              {"version", io::version_string},
              {"files", json::array()}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Figure drivers
// ---------------------------------------------------------------------------

Fig2Result reproduce_fig2(const fs::path* out_dir, std::uint64_t seed, int threads,
                          std::size_t traces) {
  Fig2Result result;
  std::vector<std::string> files;
  std::vector<std::vector<double>> fit_rows;
  json records = json::array();

  const auto& rates = fig2_scattering_rates();
  for (std::size_t i = 0; i < rates.size(); ++i) {
    io::ScenarioConfig sc = fig2_scenario(rates[i], traces);
    sc.sim.seed = derive_seed(seed, "fig2", i);
    const SimulatedScenario run = run_simulation(sc, threads);
    DecayAnalysis a = analyze_decay(run);
    if (out_dir) write_decay_csv(*out_dir, sc.name, a, files);
    records.push_back(decay_record(a, sc.name, sc.physics.ensemble.atom_number));
    fit_rows.push_back({a.gamma_sc, a.gamma_c, a.gamma_pred, a.fit.rate,
                        a.fit.rate_sigma, a.fit.asymptote});
    result.names.push_back(sc.name);
    result.per_drive.push_back(std::move(a));
  }

  if (out_dir) {
    write_csv(*out_dir / "decay_fits.csv",
              "gamma_sc,gamma_c,gamma_pred,gamma_exp,gamma_exp_sigma,asymptote",
              fit_rows);
    files.push_back("decay_fits.csv");
    write_text(*out_dir / "results.json",
               json{{"figure", "fig2"}, {"records", records}}.dump(2) + "\n");
    files.push_back("results.json");
    write_text(*out_dir / "plot_results.py", kPlotStub);
    files.push_back("plot_results.py");
    json manifest = base_manifest("reproduce fig2");
    manifest["seed"] = seed;
    manifest["files"] = files;
    write_manifest(*out_dir, manifest);
  }
  return result;
}

Fig3Result reproduce_fig3(const fs::path* out_dir, std::uint64_t seed, int threads,
                          std::size_t traces) {
  Fig3Result result;
  std::vector<std::string> files;
  std::vector<std::vector<double>> point_rows, fit_rows;
  json records = json::array();

  const auto& atom_numbers = fig3_atom_numbers();
  for (std::size_t ni = 0; ni < atom_numbers.size(); ++ni) {
    const double n_atoms = atom_numbers[ni];
    Fig3Result::PerEnsemble per;
    per.atom_number = n_atoms;
    std::vector<RateScalingPoint> points;
    const std::vector<double> rates = fig3_scattering_rates(n_atoms);
    for (std::size_t j = 0; j < rates.size(); ++j) {
      io::ScenarioConfig sc = fig3_scenario(n_atoms, rates[j], traces);
      sc.sim.seed = derive_seed(seed, "fig3", ni * 16 + j);
      const SimulatedScenario run = run_simulation(sc, threads);
      DecayAnalysis a = analyze_decay(run);
      points.push_back({a.gamma_sc, a.fit.rate, a.fit.rate_sigma});
      point_rows.push_back({n_atoms, a.gamma_sc,
                            sc.physics.cavity.eta * a.gamma_sc, a.fit.rate,
                            a.fit.rate_sigma, a.gamma_pred});
      records.push_back(decay_record(a, sc.name, n_atoms));
      per.points.push_back(std::move(a));
    }
    per.fit = fit_rate_vs_scattering(points, 0.203);
    fit_rows.push_back({n_atoms, per.fit.slope, per.fit.slope_sigma,
                        per.fit.intercept, per.fit.intercept_sigma, per.fit.chi2});
    result.per_ensemble.push_back(std::move(per));
  }

  std::vector<double> ns, slopes, slope_sigmas;
  for (const auto& per : result.per_ensemble) {
    ns.push_back(per.atom_number);
    slopes.push_back(per.fit.slope);
    slope_sigmas.push_back(per.fit.slope_sigma);
  }
  result.slope_vs_n = fit_proportional(ns, slopes, slope_sigmas);

  if (out_dir) {
    write_csv(*out_dir / "rate_points.csv",
              "atom_number,gamma_sc,eta_gamma_sc,gamma_exp,gamma_exp_sigma,gamma_pred",
              point_rows);
    files.push_back("rate_points.csv");
    write_csv(*out_dir / "rate_fits.csv",
              "atom_number,slope,slope_sigma,intercept,intercept_sigma,chi2", fit_rows);
    files.push_back("rate_fits.csv");
    json summary{{"figure", "fig3"},
                 {"records", records},
                 {"slope_vs_n",
                  {{"coefficient", result.slope_vs_n.coefficient},
                   {"coefficient_sigma", result.slope_vs_n.coefficient_sigma},
                   {"chi2", result.slope_vs_n.chi2},
                   {"dof", result.slope_vs_n.dof}}}};
    write_text(*out_dir / "results.json", summary.dump(2) + "\n");
    files.push_back("results.json");
    write_text(*out_dir / "plot_results.py", kPlotStub);
    files.push_back("plot_results.py");
    json manifest = base_manifest("reproduce fig3");
    manifest["seed"] = seed;
    manifest["files"] = files;
    write_manifest(*out_dir, manifest);
  }
  return result;
}

Fig4Result reproduce_fig4(const fs::path* out_dir, std::uint64_t seed, int threads,
                          std::size_t traces) {
  Fig4Result result;
  std::vector<std::string> files;
  json records = json::array();

  for (int side = 0; side < 2; ++side) {
    const bool heating = side == 1;
    io::ScenarioConfig sc = fig4_scenario(heating, traces);
    sc.sim.seed = derive_seed(seed, "fig4", static_cast<std::uint64_t>(side));
    const SimulatedScenario run = run_simulation(sc, threads);
    SpectrumAnalysis a = analyze_spectrum(run);
    if (out_dir) write_spectrum_csv(*out_dir, sc.name, a, files);
    records.push_back(spectrum_record(a, sc.name));
    (heating ? result.heating : result.cooling) = std::move(a);
  }

  if (out_dir) {
    write_text(*out_dir / "results.json",
               json{{"figure", "fig4"}, {"records", records}}.dump(2) + "\n");
    files.push_back("results.json");
    write_text(*out_dir / "plot_results.py", kPlotStub);
    files.push_back("plot_results.py");
    json manifest = base_manifest("reproduce fig4");
    manifest["seed"] = seed;
    manifest["files"] = files;
    write_manifest(*out_dir, manifest);
  }
  return result;
}

// ---------------------------------------------------------------------------
// CLI command bodies
// ---------------------------------------------------------------------------

int cmd_limits(const PhysicsConfig& config, const fs::path* out_dir, std::ostream& os) {
  const DerivedParams d = derive_params(config);
  const LimitReport r = cooling_limits(config);

  const std::vector<std::pair<const char*, double>> rows{
      {"resolution_floor_n0", r.n0},
      {"collective_limit", r.collective_limit},
      {"d_prefactor", r.d_prefactor},
      {"bath_limit", r.bath_limit},
      {"single_atom_limit", r.single_atom_limit},
      {"gamma_c", r.gamma_c},
      {"gamma_c_max", r.gamma_c_max},
      {"gamma_bistability", r.gamma_bist},
      {"occupation_floor", r.occupation_floor},
      {"floor_argmin_gamma_c", r.floor_argmin_gamma_c},
      {"gamma_sc", d.gamma_sc},
      {"mean_photon", d.mean_photon},
      {"mean_detected_rate", d.mean_rate},
      {"cooperativity_eta", config.cavity.eta},
  };
  os << "quantity,value\n";
  for (const auto& [k, v] : rows) os << k << "," << format_number(v) << "\n";
  os << "exceeds_bistability," << (r.exceeds_bistability ? 1 : 0) << "\n";
  os << "occupation_bound_check,n >= " << format_number(r.occupation_floor) << "\n";

  if (out_dir) {
    fs::create_directories(*out_dir);
    json rec;
    for (const auto& [k, v] : rows) rec[k] = v;
    rec["exceeds_bistability"] = r.exceeds_bistability;
    write_text(*out_dir / "limits.json", rec.dump(2) + "\n");
    json manifest = base_manifest("limits");
    manifest["config"] = io::to_json(config);
    manifest["config_hash"] = io::hash_hex(io::config_hash(io::to_json(config)));
    manifest["files"] = json::array({"limits.json"});
    write_manifest(*out_dir, manifest);
  }
  return 0;
}

int cmd_simulate(const std::vector<io::ScenarioConfig>& scenarios,
                 const fs::path& out_dir, int threads,
                 std::optional<std::uint64_t> seed_override, std::ostream& os) {
  for (io::ScenarioConfig sc : scenarios) {
    if (seed_override) sc.sim.seed = *seed_override;
    const fs::path dir = out_dir / sc.name;
    fs::create_directories(dir / "traces");

    const json canonical = io::to_json(sc);
    const std::uint64_t hash = io::config_hash(canonical);
    const SimulatedScenario run = run_simulation(sc, threads);

    std::vector<std::string> files;
    json seeds = json::array();
    json unstable = json::array();
    for (std::size_t i = 0; i < run.trajectories.size(); ++i) {
      const Trajectory& traj = run.trajectories[i];
      char name[40];
      std::snprintf(name, sizeof(name), "traces/trace_%04zu.bin", i);
      write_trace_binary(dir / name, bundle_trajectory(traj, io::hash_hex(hash)));
      files.push_back(name);
      seeds.push_back(traj.seed);
      if (traj.unstable) unstable.push_back(i);
    }

    json manifest = base_manifest("simulate");
    manifest["scenario"] = sc.name;
    manifest["config"] = canonical;
    manifest["config_hash"] = io::hash_hex(hash);
    manifest["seeds"] = seeds;
    manifest["files"] = files;
    manifest["unstable_traces"] = unstable;
    manifest["wall_seconds"] = run.wall_seconds;
    write_manifest(dir, manifest);
    os << sc.name << ": " << run.trajectories.size() << " traces -> " << dir.string()
       << (unstable.empty() ? "" : "  [unstable traces present]") << "\n";
  }
  return 0;
}

int cmd_analyze(const fs::path& run_dir, std::ostream& os) {
  const fs::path manifest_path = run_dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw ConfigError("no manifest.json in " + run_dir.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::parse_error& e) {
    throw ConfigError("bad manifest in " + run_dir.string() + ": " + e.what());
  }
  if (!manifest.contains("config")) {
    throw ConfigError("manifest lacks an embedded config: " + manifest_path.string());
  }
  const io::ScenarioConfig sc = io::parse_scenario(manifest["config"]);
  const std::string expect_hash = manifest.value("config_hash", std::string());

  SimulatedScenario run;
  run.scenario = sc;
  run.derived = derive_params(sc.physics);
  for (const auto& f : manifest["files"]) {
    const std::string name = f.get<std::string>();
    if (name.find("traces/") != 0) continue;
    const TraceBundle bundle = read_trace_binary(run_dir / name);
    if (!expect_hash.empty() && bundle.config_hash != expect_hash) {
      os << "warning: " << name << " config hash " << bundle.config_hash
         << " != manifest " << expect_hash << "\n";
    }
    Trajectory traj;
    traj.dt = bundle.dt;
    traj.t0 = bundle.t0;
    traj.seed = bundle.seed;
    const std::vector<double>* rate = bundle.find("rate");
    const std::vector<double>* x = bundle.find("x");
    const std::vector<double>* p = bundle.find("p");
    const std::vector<double>* photon = bundle.find("photon");
    if (!rate) throw ConfigError(name + ": missing rate series");
    traj.rate = *rate;
    if (x) traj.x = *x;
    if (p) traj.p = *p;
    if (photon) traj.photon = *photon;
    run.trajectories.push_back(std::move(traj));
  }
  if (run.trajectories.empty()) {
    throw ConfigError("manifest lists no trace files: " + manifest_path.string());
  }

  std::vector<std::string> files;
  json records = json::array();
  if (sc.analysis.decay) {
    DecayAnalysis a = analyze_decay(run);
    write_decay_csv(run_dir, sc.name, a, files);
    records.push_back(decay_record(a, sc.name, sc.physics.ensemble.atom_number));
    os << sc.name << ": gamma_exp = " << format_number(a.fit.rate) << " +- "
       << format_number(a.fit.rate_sigma) << " /s (predicted "
       << format_number(a.gamma_pred) << ")\n";
  }
  if (sc.analysis.spectrum) {
    SpectrumAnalysis a = analyze_spectrum(run);
    write_spectrum_csv(run_dir, sc.name, a, files);
    records.push_back(spectrum_record(a, sc.name));
    os << sc.name << ": occupation = " << format_number(a.fit.occupation) << " (+"
       << format_number(a.fit.occupation_hi - a.fit.occupation) << "/-"
       << format_number(a.fit.occupation - a.fit.occupation_lo) << ")\n";
  }
  write_text(run_dir / "analysis_results.json",
             json{{"scenario", sc.name}, {"records", records}}.dump(2) + "\n");
  files.push_back("analysis_results.json");
  write_text(run_dir / "plot_results.py", kPlotStub);
  files.push_back("plot_results.py");

  json amanifest = base_manifest("analyze");
  amanifest["scenario"] = sc.name;
  amanifest["config_hash"] = expect_hash;
  amanifest["files"] = files;
  {
    const fs::path tmp = run_dir / "analysis_manifest.json.tmp";
    std::ofstream out(tmp);
    out << amanifest.dump(2) << "\n";
    out.close();
    fs::rename(tmp, run_dir / "analysis_manifest.json");
  }
  return 0;
}

int cmd_reproduce(const std::string& figure, const fs::path& out_dir, int threads,
                  std::optional<std::uint64_t> seed_override, std::ostream& os) {
  const std::uint64_t seed = seed_override.value_or(1);
  fs::create_directories(out_dir);
  if (figure == "fig2") {
    const Fig2Result r = reproduce_fig2(&out_dir, seed, threads);
    for (std::size_t i = 0; i < r.per_drive.size(); ++i) {
      const DecayAnalysis& a = r.per_drive[i];
      os << r.names[i] << ": gamma_exp = " << format_number(a.fit.rate) << " +- "
         << format_number(a.fit.rate_sigma) << " /s, predicted "
         << format_number(a.gamma_pred) << " /s\n";
    }
  } else if (figure == "fig3") {
    const Fig3Result r = reproduce_fig3(&out_dir, seed, threads);
    for (const auto& per : r.per_ensemble) {
      os << "N = " << per.atom_number << ": f = " << format_number(per.fit.slope)
         << " +- " << format_number(per.fit.slope_sigma)
         << ", gamma_m = " << format_number(per.fit.intercept) << " +- "
         << format_number(per.fit.intercept_sigma) << " /s\n";
    }
    os << "f(N)/N = " << format_number(r.slope_vs_n.coefficient) << " +- "
       << format_number(r.slope_vs_n.coefficient_sigma) << "\n";
  } else if (figure == "fig4" || figure == "fig4b") {
    const Fig4Result r = reproduce_fig4(&out_dir, seed, threads);
    for (const SpectrumAnalysis* a : {&r.cooling, &r.heating}) {
      os << (a == &r.cooling ? "cooling" : "heating")
         << ": n = " << format_number(a->fit.occupation) << " (+"
         << format_number(a->fit.occupation_hi - a->fit.occupation) << "/-"
         << format_number(a->fit.occupation - a->fit.occupation_lo)
         << "), area estimate " << format_number(a->fit.occupation_area) << "\n";
    }
  } else {
    throw ConfigError("unknown figure '" + figure + "' (expected fig2, fig3, fig4)");
  }
  return 0;
}

int cmd_sweep(const json& sweep_config, const fs::path& out_dir, std::ostream& os) {
  if (!sweep_config.is_object() || !sweep_config.contains("sweep")) {
    throw ConfigError("sweep config must contain a 'sweep' object");
  }
  io::ScenarioConfig base;
  if (sweep_config.contains("scenario")) {
    base = io::parse_scenario(sweep_config["scenario"]);
  } else {
    base.physics.probe.mean_photon_number = 100;
    base.physics.probe.delta_cavity = -0.5 * base.physics.cavity.kappa;
  }
  const json& sw = sweep_config["sweep"];
  if (!sw.contains("param") || !sw.contains("values")) {
    throw ConfigError("sweep needs 'param' and 'values'");
  }
  const std::string param = sw["param"].get<std::string>();
  if (!sw["values"].is_array()) throw ConfigError("sweep.values must be an array");

  struct ParamSpec {
    io::Dimension dim;
    void (*set)(PhysicsConfig&, double);
  };
  const std::map<std::string, ParamSpec> setters{
      {"ensemble.atom_number",
       {io::Dimension::dimensionless,
        [](PhysicsConfig& p, double v) { p.ensemble.atom_number = v; }}},
      {"probe.mean_photon_number",
       {io::Dimension::dimensionless,
        [](PhysicsConfig& p, double v) {
          p.probe.mean_photon_number = v;
          p.probe.mean_detected_rate.reset();
        }}},
      {"probe.mean_detected_rate",
       {io::Dimension::rate,
        [](PhysicsConfig& p, double v) {
          p.probe.mean_detected_rate = v;
          p.probe.mean_photon_number.reset();
        }}},
      {"probe.delta_cavity",
       {io::Dimension::angular_frequency,
        [](PhysicsConfig& p, double v) { p.probe.delta_cavity = v; }}},
      {"trap.gamma_m",
       {io::Dimension::rate, [](PhysicsConfig& p, double v) { p.trap.gamma_m = v; }}},
      {"trap.omega_t",
       {io::Dimension::angular_frequency,
        [](PhysicsConfig& p, double v) { p.trap.omega_t = v; }}},
      {"trap.n_bath",
       {io::Dimension::dimensionless,
        [](PhysicsConfig& p, double v) { p.trap.n_bath = v; }}},
      {"cavity.eta",
       {io::Dimension::dimensionless,
        [](PhysicsConfig& p, double v) { p.cavity.eta = v; }}},
  };
  auto it = setters.find(param);
  if (it == setters.end()) throw ConfigError("sweep: unsupported param '" + param + "'");

  fs::create_directories(out_dir);
  std::vector<std::vector<double>> rows;
  os << "x,n0,collective_limit,bath_limit,single_atom_limit,gamma_c,gamma_c_max,"
        "occupation_floor,exceeds_bistability\n";
  for (const auto& jv : sw["values"]) {
    const double v = io::parse_quantity(jv, it->second.dim, "sweep.values");
    PhysicsConfig cfg = base.physics;
    it->second.set(cfg, v);
    validate(cfg);
    const LimitReport r = cooling_limits(cfg);
    rows.push_back({v, r.n0, r.collective_limit, r.bath_limit, r.single_atom_limit,
                    r.gamma_c, r.gamma_c_max, r.occupation_floor,
                    r.exceeds_bistability ? 1.0 : 0.0});
    os << format_number(v) << "," << format_number(r.n0) << ","
       << format_number(r.collective_limit) << "," << format_number(r.bath_limit)
       << "," << format_number(r.single_atom_limit) << "," << format_number(r.gamma_c)
       << "," << format_number(r.gamma_c_max) << ","
       << format_number(r.occupation_floor) << "," << (r.exceeds_bistability ? 1 : 0)
       << "\n";
  }
  write_csv(out_dir / "sweep.csv",
            "x,n0,collective_limit,bath_limit,single_atom_limit,gamma_c,gamma_c_max,"
            "occupation_floor,exceeds_bistability",
            rows);
  write_text(out_dir / "plot_results.py", kPlotStub);
  json manifest = base_manifest("sweep");
  manifest["param"] = param;
  manifest["files"] = json::array({"sweep.csv", "plot_results.py"});
  write_manifest(out_dir, manifest);
  return 0;
}

}  // namespace cavsim::cli
