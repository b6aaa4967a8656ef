#pragma once

#include <complex>
#include <cstdint>
#include <optional>
#include <vector>

#include "cavsim/model.hpp"
#include "cavsim/types.hpp"

namespace cavsim {

enum class Scheme { semi_implicit, euler_maruyama };

struct SimConfig {
  double dt = 2e-9;          // integration step, s
  double duration = 100e-6;  // total simulated time, s
  std::uint64_t seed = 1;
  Scheme scheme = Scheme::semi_implicit;
  int record_stride = 1;     // record every n-th step
  // Scales the optomechanical coupling G (0 decouples mode and cavity;
  // backaction noise scales with it consistently).
  double coupling_scale = 1.0;
  // Linearization cap: |G X| fed to the cavity is clamped to this multiple
  // of kappa (beyond it the unmodeled trap anharmonicity would intervene).
  double coupling_cap_kappa = 1.0;
  // Trajectory is truncated (and flagged unstable) when the symmetrized
  // occupation exceeds this.
  double overflow_occupation = 1e12;
};

struct NoiseConfig {
  double recoil_factor = 1.0;      // scales free-space recoil diffusion
  bool include_zero_point = true;  // s = 1/2 zero-point noise in bath/backaction
  bool backaction_noise = true;    // intracavity shot-noise force on the mode
  // Laser frequency noise (Ornstein-Uhlenbeck on the probe-cavity detuning):
  //   phase_linewidth < 0  -> auto-calibrate so the detected phase-noise PSD
  //                           at omega_t is half the photon shot-noise level
  //   phase_linewidth = 0  -> off
  //   phase_linewidth > 0  -> laser FWHM linewidth, rad/s
  double phase_linewidth = -1.0;
  double phase_tau = 0.0;          // OU correlation time, s; 0 -> 0.2/kappa
};

// Detuning schedule: probe.delta_cavity after t_switch, delta_initial before.
// The mixing rate and the drive strength may differ on the initial (heating)
// side; photon_initial is the steady-state intracavity photon number the
// initial-phase drive would sustain at its own detuning.
struct DriveConfig {
  std::optional<double> delta_initial;
  double t_switch = 0.0;
  std::optional<double> gamma_m_initial;
  std::optional<double> photon_initial;
};

struct InitialState {
  double thermal_occupation = 0.0;  // X, P drawn thermally at this occupation
  double coherent_quanta = 0.0;     // deterministic displacement, quanta
  double coherent_phase = 0.0;      // phase of that displacement
  bool random_phase = false;        // draw the phase per trace instead
  std::optional<double> x = {};     // absolute overrides (test hooks)
  std::optional<double> p = {};
};

// All precomputed integration coefficients, exposed so tests can check the
// noise calibration against closed forms.
struct LangevinSetup {
  double m_eff = 0;
  double omega_t = 0;
  double x_zpf = 0;
  double p_zpf = 0;                 // m_eff * omega_t * x_zpf
  double kappa = 0;
  double drive_amplitude = 0;       // epsilon, from the post-switch steady state
  double photon_reference = 0;      // mean photon number subtracted in the force
  double g_eff = 0;                 // coupling_scale * G, rad/(s m)
  double force_per_photon = 0;      // hbar * G_eff
  double zero_point_s = 0;          // 1/2 or 0
  double bath_force_psd = 0;        // two-sided white force PSD, N^2 s
  double recoil_force_psd = 0;
  double backaction_force_psd = 0;
  double backaction_quanta_rate = 0;  // A- + s*gamma_c computed from the coupling route
  double phase_tau = 0;             // OU correlation time, s (0 = phase noise off)
  double phase_sigma = 0;           // stationary RMS frequency excursion, rad/s
  double phase_linewidth = 0;       // resulting laser FWHM 2 sigma^2 tau, rad/s
  double cap_gx = 0;                // clamp for |G_eff X|, rad/s
  double rate_per_photon = 0;       // detected rate per intracavity photon, 1/s
};

LangevinSetup compute_langevin_setup(const SimConfig& sim, const DerivedParams& d,
                                     const NoiseConfig& noise,
                                     const DriveConfig& drive = {});

// The laser linewidth the auto calibration resolves to (rad/s FWHM).
double calibrated_phase_linewidth(const DerivedParams& d, const NoiseConfig& noise);

struct Trajectory {
  double dt = 0;   // recorded sample period (sim dt * record_stride)
  double t0 = 0;
  std::uint64_t seed = 0;
  std::vector<double> x;       // collective coordinate, m
  std::vector<double> p;       // conjugate momentum, kg m/s
  std::vector<double> photon;  // intracavity photon number
  std::vector<double> rate;    // detected output rate, 1/s
  bool cap_engaged = false;    // linearization cap clamped |G X| at least once
  bool unstable = false;       // overflow guard tripped; series truncated
  std::optional<std::size_t> truncated_at;

  std::size_t size() const { return x.size(); }
  TimeTrace rate_trace() const { return TimeTrace{dt, t0, rate, seed, "rate"}; }
};

// Integrates the coupled Langevin equations
//   dX = (P/M_eff) dt
//   dP = [-M_eff omega_t^2 X - gamma_m P - hbar G_eff (|alpha|^2 - ref)] dt + dW
//   dalpha = [i(delta + nu - G_eff X) - kappa/2] alpha dt + eps dt
// where dW carries bath, recoil and cavity-backaction noise and nu is the OU
// laser frequency noise.  The default scheme alternates exact half-period
// oscillator rotations with exact cavity/OU updates and an exactly damped
// momentum kick, so the G = 0 noiseless limit conserves energy to rounding.
Trajectory simulate_langevin(const SimConfig& sim, const PhysicsConfig& physics,
                             const NoiseConfig& noise, const DriveConfig& drive = {},
                             const InitialState& initial = {});

// Heating phase at the mirrored detuning -delta_cavity until t_switch, then
// cooling at delta_cavity, state continuous across the switch.
Trajectory run_heat_then_cool(const SimConfig& sim, const PhysicsConfig& physics,
                              const NoiseConfig& noise, double t_switch,
                              std::optional<double> gamma_m_heating = {},
                              const InitialState& initial = {});

// Deterministic parallel map over per-trace seeds derived from sim.seed:
// results are identical for any thread count.
std::vector<Trajectory> simulate_ensemble(const SimConfig& sim,
                                          const PhysicsConfig& physics,
                                          const NoiseConfig& noise,
                                          const DriveConfig& drive,
                                          const InitialState& initial,
                                          std::size_t n_traces, int threads = 1);

// Symmetrized instantaneous occupation X^2/(4 X0^2) + P^2/(4 P0^2) of one
// trajectory, as a TimeTrace.
TimeTrace occupation_series(const Trajectory& traj, const DerivedParams& d);

// Ensemble mean of occupation_series over equally long trajectories.
TimeTrace mean_occupation_series(const std::vector<Trajectory>& trajs,
                                 const DerivedParams& d);

// Time-averaged symmetrized occupation, skipping the first `skip` samples.
double mean_symmetrized_occupation(const Trajectory& traj, const DerivedParams& d,
                                   std::size_t skip = 0);

// ---------------------------------------------------------------------------
// Quantum rate equation (closed form)
// ---------------------------------------------------------------------------

struct RateCurve {
  std::vector<double> time;
  std::vector<double> occupation;
  bool unstable = false;                    // gamma_c + gamma_m <= 0
  std::optional<std::size_t> truncated_at;  // first index past the cap
};

// n(t) = n_inf + (n0 - n_inf) exp(-(gamma_c+gamma_m) t); for non-dissipative
// configurations the diverging closed form is evaluated until the occupation
// cap, then truncated with the instability flag set.
RateCurve integrate_rate_equation(double n0, const DerivedParams& d,
                                  const std::vector<double>& t_grid,
                                  double recoil_factor = 1.0, double cap = 1e9);

// Fractional-variance transduction per quantum: 8 (G X0 / kappa)^2 |L+ - L-|^2.
double transduction_coefficient(const DerivedParams& d);

}  // namespace cavsim
