#pragma once

#include <complex>
#include <optional>
#include <vector>

#include "cavsim/constants.hpp"
#include "cavsim/types.hpp"

namespace cavsim {

// ---------------------------------------------------------------------------
// Input parameters (SI units throughout; angular frequencies in rad/s)
// ---------------------------------------------------------------------------

struct AtomParams {
  double mass = rb87_mass;               // kg
  double linewidth = rb87_linewidth;     // natural linewidth Gamma, rad/s
  double wavenumber = rb87_wavenumber;   // probe transition wavenumber k, rad/m
};

struct CavityParams {
  double kappa = two_pi * 1.01e6;  // power decay rate kappa, rad/s
  double eta = 0.203;              // single-atom cooperativity 4 g^2 / (kappa Gamma)
  std::optional<double> waist;     // mode waist, m (informational only)
};

struct TrapParams {
  double omega_t = two_pi * 480e3;  // axial trap frequency, rad/s
  std::optional<double> depth;      // trap depth, J (informational only)
  double gamma_m = 0.0;             // mixing rate into the rest of the ensemble, 1/s
  double n_bath = 0.0;              // occupation the mixing bath relaxes toward
};

struct EnsembleConfig {
  double atom_number = 2800;  // N; calibrated averages may be non-integer
  // Axial trap-minimum locations, m.  When absent the statistical
  // (incommensurate-lattice) geometry averages are used instead.
  std::optional<std::vector<double>> positions;
  double statistical_zeta = 0.5;  // <sin^2(2 k xi)> used in statistical mode
};

struct ProbeParams {
  double delta_atom = two_pi * 140e6;  // probe-atom detuning Delta, rad/s (>0 = blue)
  double delta_cavity = 0.0;           // probe-cavity detuning delta, rad/s (<0 = cooling)
  // Exactly one drive normalization must be given: steady-state intracavity
  // photon number, or mean detected photon rate (1/s).
  std::optional<double> mean_photon_number;
  std::optional<double> mean_detected_rate;
  double detection_efficiency = 1.0;
};

struct PhysicsConfig {
  AtomParams atom;
  CavityParams cavity;
  TrapParams trap;
  EnsembleConfig ensemble;
  ProbeParams probe;
};

// Throws ConfigError on unphysical values or an over/under-specified drive.
void validate(const PhysicsConfig& config);

// ---------------------------------------------------------------------------
// Derived quantities
// ---------------------------------------------------------------------------

// Cavity Lorentzian factors at the two sidebands:
//   upper = 1 / (1 - 2i(delta + omega)/kappa)   (anti-Stokes / cooling side)
//   lower = 1 / (1 + 2i(delta - omega)/kappa)   (Stokes / heating side)
// Re L = |L|^2 holds exactly for this form and is used as a self check.
struct SidebandPair {
  std::complex<double> upper;
  std::complex<double> lower;
};

SidebandPair sideband_lorentzians(double delta, double omega, double kappa);

// Geometric sums over the atomic positions in the probe standing wave.
struct GeometryFactors {
  double zeta = 0.5;     // N^-1 sum sin^2(2 k xi): participation of the collective mode
  double shift_sum = 0;  // sum sin^2(k xi): dispersive shift in units of the
                         // per-atom, per-photon light shift (in [0, N])
};

GeometryFactors ensemble_geometry(const EnsembleConfig& ensemble, double wavenumber);

struct DerivedParams {
  PhysicsConfig config;        // the inputs these values were computed from
  GeometryFactors geometry;

  double g = 0;                // single-atom vacuum Rabi coupling, rad/s
  double shift_per_photon = 0; // per-atom light shift per photon g^2/Delta, rad/s
  double opto_coupling = 0;    // G = N (g^2/Delta) k: cavity shift per displacement, rad/(s m)
  double collective_shift = 0; // static dispersive shift shift_sum * g^2/Delta, rad/s
  double recoil_energy = 0;    // E_r = (hbar k)^2 / (2 m), J
  double x_zpf = 0;            // zero-point spread of the collective coordinate, m
  double m_eff = 0;            // effective mass N m / zeta, kg (infinite when zeta = 0)
  double lamb_dicke_sq = 0;    // E_r / (hbar omega_t)
  double mean_photon = 0;      // steady-state intracavity photon number
  double mean_rate = 0;        // mean detected photon rate, 1/s
  double gamma_sc = 0;         // free-space scattering rate per atom, 1/s
  double n0 = 0;               // sideband-resolution floor (kappa / 4 omega_t)^2
  double trap_q = 0;           // omega_t / gamma_m (infinite when gamma_m = 0)
  SidebandPair sidebands;      // at the configured detuning
  double a_plus = 0;           // upper-sideband (phonon-removing) rate coefficient, 1/s
  double a_minus = 0;          // lower-sideband (phonon-adding) rate coefficient, 1/s
  double gamma_c = 0;          // cavity cooling rate a_plus - a_minus, 1/s (<0 = anti-damping)
};

DerivedParams derive_params(const PhysicsConfig& config);

// Net power removed from the collective mode at occupation n, W.
// P = N Gamma_sc eta E_r zeta (n |L+|^2 - (n+1) |L-|^2); positive = cooling.
double cooling_power(double occupation, const DerivedParams& d);

// Rate constant of the linearized occupation equation (= d.gamma_c).
double cooling_rate_constant(const DerivedParams& d);

// Steady state of dn/dt = -(gamma_c + gamma_m) n + A- + A_rec + gamma_m n_bath,
// with A_rec = recoil_factor * E_r Gamma_sc / (hbar omega_t).
// Throws InstabilityError when gamma_c + gamma_m <= 0.
double equilibrium_occupation(const DerivedParams& d, double recoil_factor = 1.0);

// ---------------------------------------------------------------------------
// Cooling limits
// ---------------------------------------------------------------------------

struct LimitReport {
  double n0 = 0;                   // sideband-resolution floor
  double collective_limit = 0;     // equilibrium at gamma_m = 0 with recoil on
  double d_prefactor = 0;          // N eta (collective_limit - n0) / (1 + n0)
  double bath_limit = 0;           // n_bath gamma_m / (gamma_m + gamma_c)
  double single_atom_limit = 0;    // n0 + 1/eta
  double gamma_c = 0;              // cooling rate at the configured drive
  double gamma_c_max = 0;          // bistability bound omega_t^2 / kappa
  double gamma_bist = 0;           // drive level where static spring softening destabilizes
  double occupation_floor = 0;     // min over drive of equilibrium corrected for softening
  double floor_argmin_gamma_c = 0; // drive (as gamma_c) achieving the floor
  bool exceeds_bistability = false;  // configured gamma_c > gamma_c_max
};

LimitReport cooling_limits(const PhysicsConfig& config);

}  // namespace cavsim
