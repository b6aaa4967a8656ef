#include "cavsim/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <numbers>
#include <thread>

#include "cavsim/random.hpp"

namespace cavsim {

namespace {

void validate_sim(const SimConfig& sim, const PhysicsConfig& physics) {
  if (!(sim.dt > 0)) throw ConfigError("sim.dt must be positive");
  if (!(sim.duration >= sim.dt)) throw ConfigError("sim.duration must be at least dt");
  if (!(sim.dt * physics.trap.omega_t < 0.1)) {
    throw ConfigError("sim.dt too coarse: dt * omega_t must stay below 0.1");
  }
  if (sim.record_stride < 1) throw ConfigError("sim.record_stride must be >= 1");
  if (!(sim.coupling_scale >= 0)) throw ConfigError("sim.coupling_scale must be >= 0");
  if (!(sim.coupling_cap_kappa > 0)) throw ConfigError("sim.coupling_cap_kappa must be positive");
  if (!(sim.overflow_occupation > 0)) throw ConfigError("sim.overflow_occupation must be positive");
}

// Exact update coefficients for dP = (-gamma P + F) dt + sqrt(S) dW over one
// step: P <- P damp + F force_coef + N(0, noise_var).
struct KickCoefficients {
  double gamma = 0;
  double damp = 1;
  double force_coef = 0;
  double noise_sd = 0;
};

KickCoefficients make_kick(double gamma, double dt, double force_psd_total) {
  KickCoefficients k;
  k.gamma = gamma;
  if (gamma > 0) {
    k.damp = std::exp(-gamma * dt);
    k.force_coef = (1.0 - k.damp) / gamma;
    k.noise_sd = std::sqrt(force_psd_total * (1.0 - k.damp * k.damp) / (2.0 * gamma));
  } else {
    k.damp = 1.0;
    k.force_coef = dt;
    k.noise_sd = std::sqrt(force_psd_total * dt);
  }
  return k;
}

}  // namespace

double calibrated_phase_linewidth(const DerivedParams& d, const NoiseConfig& noise) {
  if (noise.phase_linewidth == 0) return 0.0;
  if (noise.phase_linewidth > 0) return noise.phase_linewidth;
  // Auto mode: choose the OU strength such that the phase-noise contribution
  // to the detected fractional-intensity PSD at omega_t is half the photon
  // shot-noise level 2/R.  The loop transfer from frequency noise to
  // fractional intensity is |2 (L+ - L-) / kappa|^2.
  const double kappa = d.config.cavity.kappa;
  const double tau = noise.phase_tau > 0 ? noise.phase_tau : 0.2 / kappa;
  const double dl = std::norm(d.sidebands.upper - d.sidebands.lower);
  if (dl <= 0 || d.mean_rate <= 0) return 0.0;
  const double target_psd = 0.5 * (2.0 / d.mean_rate) * kappa * kappa / (4.0 * dl);
  const double wt = d.config.trap.omega_t * tau;
  // One-sided OU spectrum: S(omega) = 4 sigma^2 tau / (1 + (omega tau)^2).
  const double sigma2 = target_psd * (1.0 + wt * wt) / (4.0 * tau);
  return 2.0 * sigma2 * tau;  // Lorentzian FWHM of the resulting laser line
}

LangevinSetup compute_langevin_setup(const SimConfig& sim, const DerivedParams& d,
                                     const NoiseConfig& noise,
                                     const DriveConfig& drive) {
  (void)drive;
  if (!(noise.recoil_factor >= 0)) throw ConfigError("noise.recoil_factor must be >= 0");
  if (!(d.geometry.zeta > 0)) {
    throw ConfigError(
        "collective mode decoupled (zeta = 0): nothing to simulate");
  }
  LangevinSetup s;
  s.m_eff = d.m_eff;
  s.omega_t = d.config.trap.omega_t;
  s.x_zpf = d.x_zpf;
  s.p_zpf = d.m_eff * s.omega_t * d.x_zpf;
  s.kappa = d.config.cavity.kappa;
  s.g_eff = sim.coupling_scale * d.opto_coupling;
  s.force_per_photon = hbar * s.g_eff;
  s.photon_reference = d.mean_photon;
  const double delta_post = d.config.probe.delta_cavity;
  s.drive_amplitude = std::sqrt(
      d.mean_photon * (0.25 * s.kappa * s.kappa + delta_post * delta_post));
  s.zero_point_s = noise.include_zero_point ? 0.5 : 0.0;

  const double hw = hbar * s.omega_t;
  s.bath_force_psd = 2.0 * s.m_eff * d.config.trap.gamma_m * hw *
                     (d.config.trap.n_bath + s.zero_point_s);
  s.recoil_force_psd =
      2.0 * s.m_eff * noise.recoil_factor * d.recoil_energy * d.gamma_sc;
  if (noise.backaction_noise) {
    // Quanta input rate A- + s*gamma_c, written through the coupling route
    // 4 (G X0)^2 <a^dag a> / kappa so it vanishes with the coupling.
    const double gx0 = s.g_eff * s.x_zpf;
    const double base = 4.0 * gx0 * gx0 * d.mean_photon / s.kappa;
    const double lp = std::norm(d.sidebands.upper);
    const double lm = std::norm(d.sidebands.lower);
    s.backaction_quanta_rate = base * (lm + s.zero_point_s * (lp - lm));
    s.backaction_force_psd = 2.0 * s.m_eff * hw * s.backaction_quanta_rate;
  }
  const double lw = calibrated_phase_linewidth(d, noise);
  if (lw > 0) {
    s.phase_tau = noise.phase_tau > 0 ? noise.phase_tau : 0.2 / s.kappa;
    s.phase_sigma = std::sqrt(lw / (2.0 * s.phase_tau));
    s.phase_linewidth = lw;
  }
  s.cap_gx = sim.coupling_cap_kappa * s.kappa;
  s.rate_per_photon = d.config.probe.detection_efficiency * 0.5 * s.kappa;
  return s;
}

Trajectory simulate_langevin(const SimConfig& sim, const PhysicsConfig& physics,
                             const NoiseConfig& noise, const DriveConfig& drive,
                             const InitialState& initial) {
  const DerivedParams d = derive_params(physics);
  validate_sim(sim, physics);
  if (drive.t_switch < 0 || drive.t_switch > sim.duration) {
    throw ConfigError("drive.t_switch must lie within the simulated duration");
  }
  const LangevinSetup s = compute_langevin_setup(sim, d, noise, drive);

  const double dt = sim.dt;
  const auto n_steps =
      std::max<long long>(1, std::llround(sim.duration / dt));
  const long long n_switch =
      drive.t_switch > 0
          ? std::min<long long>(n_steps, std::llround(drive.t_switch / dt))
          : 0;

  struct PhaseCoefs {
    double delta = 0;
    double drive_amplitude = 0;
    double photon_reference = 0;
    KickCoefficients kick;
  };
  auto make_phase = [&](double delta, double gamma_m, double photons) {
    PhaseCoefs ph;
    ph.delta = delta;
    ph.photon_reference = photons;
    ph.drive_amplitude =
        std::sqrt(photons * (0.25 * s.kappa * s.kappa + delta * delta));
    const double bath_psd = 2.0 * s.m_eff * gamma_m * hbar * s.omega_t *
                            (physics.trap.n_bath + s.zero_point_s);
    // Photon-mediated diffusion (recoil and backaction) scales with the
    // phase's intracavity photon number.
    const double photon_scale = d.mean_photon > 0 ? photons / d.mean_photon : 1.0;
    ph.kick = make_kick(gamma_m, dt,
                        bath_psd + photon_scale * (s.recoil_force_psd +
                                                   s.backaction_force_psd));
    return ph;
  };
  const PhaseCoefs post =
      make_phase(physics.probe.delta_cavity, physics.trap.gamma_m, d.mean_photon);
  const PhaseCoefs pre =
      n_switch > 0
          ? make_phase(drive.delta_initial.value_or(physics.probe.delta_cavity),
                       drive.gamma_m_initial.value_or(physics.trap.gamma_m),
                       drive.photon_initial.value_or(d.mean_photon))
          : post;

  Rng rng(sim.seed);

  // Initial mechanical state.
  double X = 0.0;
  double P = 0.0;
  if (initial.thermal_occupation > 0 || s.zero_point_s > 0) {
    const double n_eff = initial.thermal_occupation + s.zero_point_s;
    X = s.x_zpf * std::sqrt(2.0 * n_eff) * rng.normal();
    P = s.p_zpf * std::sqrt(2.0 * n_eff) * rng.normal();
  }
  if (initial.coherent_quanta > 0) {
    const double amp = std::sqrt(initial.coherent_quanta);
    const double phase = initial.random_phase
                             ? 2.0 * std::numbers::pi * rng.uniform01()
                             : initial.coherent_phase;
    X += 2.0 * s.x_zpf * amp * std::cos(phase);
    P -= 2.0 * s.p_zpf * amp * std::sin(phase);
  }
  if (initial.x) X = *initial.x;
  if (initial.p) P = *initial.p;

  double nu = s.phase_sigma > 0 ? s.phase_sigma * rng.normal() : 0.0;

  Trajectory traj;
  traj.dt = dt * sim.record_stride;
  traj.seed = sim.seed;
  const std::size_t n_rec =
      static_cast<std::size_t>(n_steps / sim.record_stride) + 1;
  traj.x.reserve(n_rec);
  traj.p.reserve(n_rec);
  traj.photon.reserve(n_rec);
  traj.rate.reserve(n_rec);

  auto clamp_gx = [&](double x_now) {
    double gx = s.g_eff * x_now;
    if (gx > s.cap_gx) {
      gx = s.cap_gx;
      traj.cap_engaged = true;
    } else if (gx < -s.cap_gx) {
      gx = -s.cap_gx;
      traj.cap_engaged = true;
    }
    return gx;
  };

  // Initial cavity state: steady state at the initial effective detuning.
  const std::complex<double> i1(0.0, 1.0);
  const double delta0 = pre.delta;
  std::complex<double> alpha =
      pre.drive_amplitude / (0.5 * s.kappa - i1 * (delta0 + nu - clamp_gx(X)));

  auto record = [&]() {
    traj.x.push_back(X);
    traj.p.push_back(P);
    const double nph = std::norm(alpha);
    traj.photon.push_back(nph);
    traj.rate.push_back(s.rate_per_photon * nph);
  };
  record();

  // Precomputed half-rotation and OU coefficients.
  const double theta = s.omega_t * dt * 0.5;
  const double cr = std::cos(theta);
  const double sr = std::sin(theta);
  const double mw = s.m_eff * s.omega_t;
  const double ou_a = s.phase_tau > 0 ? std::exp(-dt / s.phase_tau) : 0.0;
  const double ou_sd =
      s.phase_sigma > 0 ? s.phase_sigma * std::sqrt(1.0 - ou_a * ou_a) : 0.0;
  const double inv_4x2 = 1.0 / (4.0 * s.x_zpf * s.x_zpf);
  const double inv_4p2 = 1.0 / (4.0 * s.p_zpf * s.p_zpf);

  auto half_rotate = [&]() {
    const double xn = X * cr + (P / mw) * sr;
    P = P * cr - mw * X * sr;
    X = xn;
  };

  bool overflowed = false;
  for (long long step = 1; step <= n_steps; ++step) {
    const PhaseCoefs& ph = step <= n_switch ? pre : post;

    if (sim.scheme == Scheme::semi_implicit) {
      half_rotate();
      // Exact cavity update over dt with the mid-step position frozen.
      const double gx = clamp_gx(X);
      const std::complex<double> lam(-0.5 * s.kappa, ph.delta + nu - gx);
      const std::complex<double> e = std::exp(lam * dt);
      alpha = alpha * e + ph.drive_amplitude * (e - 1.0) / lam;
      const double force =
          -s.force_per_photon * (std::norm(alpha) - ph.photon_reference);
      P = P * ph.kick.damp + force * ph.kick.force_coef;
      if (ph.kick.noise_sd > 0) P += ph.kick.noise_sd * rng.normal();
      half_rotate();
    } else {
      const double gx = clamp_gx(X);
      const std::complex<double> lam(-0.5 * s.kappa, ph.delta + nu - gx);
      const std::complex<double> dalpha = (lam * alpha + ph.drive_amplitude) * dt;
      const double force =
          -s.force_per_photon * (std::norm(alpha) - ph.photon_reference);
      const double xn = X + (P / s.m_eff) * dt;
      double pn = P + (-mw * s.omega_t * X - ph.kick.gamma * P + force) * dt;
      // Euler-Maruyama uses the plain sqrt(S dt) diffusion increment.
      const double photon_scale =
          d.mean_photon > 0 ? ph.photon_reference / d.mean_photon : 1.0;
      const double s_tot_dt =
          (2.0 * s.m_eff * ph.kick.gamma * hbar * s.omega_t *
               (physics.trap.n_bath + s.zero_point_s) +
           photon_scale * (s.recoil_force_psd + s.backaction_force_psd)) *
          dt;
      if (s_tot_dt > 0) pn += std::sqrt(s_tot_dt) * rng.normal();
      alpha += dalpha;
      X = xn;
      P = pn;
    }

    if (s.phase_tau > 0) nu = nu * ou_a + ou_sd * rng.normal();

    if (step % sim.record_stride == 0) record();

    const double occ = X * X * inv_4x2 + P * P * inv_4p2;
    if (!std::isfinite(occ) || occ > sim.overflow_occupation) {
      overflowed = true;
      break;
    }
  }

  if (overflowed) {
    traj.unstable = true;
    traj.truncated_at = traj.x.size();
  }
  return traj;
}

Trajectory run_heat_then_cool(const SimConfig& sim, const PhysicsConfig& physics,
                              const NoiseConfig& noise, double t_switch,
                              std::optional<double> gamma_m_heating,
                              const InitialState& initial) {
  DriveConfig drive;
  drive.delta_initial = -physics.probe.delta_cavity;
  drive.t_switch = t_switch;
  drive.gamma_m_initial = gamma_m_heating;
  return simulate_langevin(sim, physics, noise, drive, initial);
}

std::vector<Trajectory> simulate_ensemble(const SimConfig& sim,
                                          const PhysicsConfig& physics,
                                          const NoiseConfig& noise,
                                          const DriveConfig& drive,
                                          const InitialState& initial,
                                          std::size_t n_traces, int threads) {
  std::vector<Trajectory> out(n_traces);
  const int n_workers =
      std::max(1, std::min<int>(threads, static_cast<int>(n_traces)));
  std::exception_ptr first_error;
  std::mutex error_mutex;

  auto work = [&](int worker) {
    for (std::size_t i = worker; i < n_traces;
         i += static_cast<std::size_t>(n_workers)) {
      try {
        SimConfig per_trace = sim;
        per_trace.seed = derive_seed(sim.seed, "trace", i);
        out[i] = simulate_langevin(per_trace, physics, noise, drive, initial);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  if (n_workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

TimeTrace occupation_series(const Trajectory& traj, const DerivedParams& d) {
  if (!(d.x_zpf > 0)) throw ConfigError("occupation undefined for zeta = 0");
  const double p_zpf = d.m_eff * d.config.trap.omega_t * d.x_zpf;
  const double ix = 1.0 / (4.0 * d.x_zpf * d.x_zpf);
  const double ip = 1.0 / (4.0 * p_zpf * p_zpf);
  TimeTrace out;
  out.dt = traj.dt;
  out.t0 = traj.t0;
  out.seed = traj.seed;
  out.label = "occupation";
  out.values.resize(traj.size());
  for (std::size_t i = 0; i < traj.size(); ++i) {
    out.values[i] = traj.x[i] * traj.x[i] * ix + traj.p[i] * traj.p[i] * ip;
  }
  return out;
}

TimeTrace mean_occupation_series(const std::vector<Trajectory>& trajs,
                                 const DerivedParams& d) {
  if (trajs.empty()) throw ConfigError("mean_occupation_series: empty ensemble");
  TimeTrace mean = occupation_series(trajs.front(), d);
  for (std::size_t k = 1; k < trajs.size(); ++k) {
    const TimeTrace one = occupation_series(trajs[k], d);
    if (one.values.size() != mean.values.size() || one.dt != mean.dt) {
      throw ConfigError("mean_occupation_series: mismatched trajectories");
    }
    for (std::size_t i = 0; i < mean.values.size(); ++i) {
      mean.values[i] += one.values[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(trajs.size());
  for (double& v : mean.values) v *= inv;
  mean.label = "mean_occupation";
  return mean;
}

double mean_symmetrized_occupation(const Trajectory& traj, const DerivedParams& d,
                                   std::size_t skip) {
  const TimeTrace occ = occupation_series(traj, d);
  if (skip >= occ.values.size()) {
    throw ConfigError("mean_symmetrized_occupation: skip exceeds trace length");
  }
  double acc = 0.0;
  for (std::size_t i = skip; i < occ.values.size(); ++i) acc += occ.values[i];
  return acc / static_cast<double>(occ.values.size() - skip);
}

RateCurve integrate_rate_equation(double n0, const DerivedParams& d,
                                  const std::vector<double>& t_grid,
                                  double recoil_factor, double cap) {
  if (!(n0 >= 0)) throw ConfigError("integrate_rate_equation: n0 must be >= 0");
  const double gamma_m = d.config.trap.gamma_m;
  const double gamma_tot = d.gamma_c + gamma_m;
  const double source = d.a_minus + recoil_factor * d.lamb_dicke_sq * d.gamma_sc +
                        gamma_m * d.config.trap.n_bath;
  RateCurve rc;
  rc.unstable = gamma_tot <= 0;
  rc.time.reserve(t_grid.size());
  rc.occupation.reserve(t_grid.size());
  for (std::size_t i = 0; i < t_grid.size(); ++i) {
    const double t = t_grid[i];
    double n;
    if (gamma_tot != 0) {
      const double n_fix = source / gamma_tot;
      n = n_fix + (n0 - n_fix) * std::exp(-gamma_tot * t);
    } else {
      n = n0 + source * t;
    }
    if (rc.unstable && n > cap) {
      rc.truncated_at = i;
      break;
    }
    rc.time.push_back(t);
    rc.occupation.push_back(n);
  }
  return rc;
}

double transduction_coefficient(const DerivedParams& d) {
  const double gx0 = d.opto_coupling * d.x_zpf / d.config.cavity.kappa;
  return 8.0 * gx0 * gx0 * std::norm(d.sidebands.upper - d.sidebands.lower);
}

}  // namespace cavsim
