#include "cavsim/model.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace cavsim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

double norm2(const std::complex<double>& z) { return std::norm(z); }

}  // namespace

void validate(const PhysicsConfig& c) {
  require(c.atom.mass > 0, "atom.mass must be positive");
  require(c.atom.linewidth > 0, "atom.linewidth must be positive");
  require(c.atom.wavenumber > 0, "atom.wavenumber must be positive");
  require(c.cavity.kappa > 0, "cavity.kappa must be positive");
  require(c.cavity.eta > 0, "cavity.eta must be positive");
  if (c.cavity.waist) require(*c.cavity.waist > 0, "cavity.waist must be positive");
  require(c.trap.omega_t > 0, "trap.omega_t must be positive");
  if (c.trap.depth) require(*c.trap.depth > 0, "trap.depth must be positive");
  require(c.trap.gamma_m >= 0, "trap.gamma_m must be nonnegative");
  require(c.trap.n_bath >= 0, "trap.n_bath must be nonnegative");
  require(c.ensemble.atom_number >= 1, "ensemble.atom_number must be at least 1");
  require(c.ensemble.statistical_zeta >= 0 && c.ensemble.statistical_zeta <= 1,
          "ensemble.statistical_zeta must lie in [0, 1]");
  if (c.ensemble.positions) {
    require(!c.ensemble.positions->empty(), "ensemble.positions must not be empty");
    require(static_cast<double>(c.ensemble.positions->size()) == c.ensemble.atom_number,
            "ensemble.positions length must equal atom_number");
  }
  require(c.probe.delta_atom != 0, "probe.delta_atom must be nonzero");
  const bool has_photon = c.probe.mean_photon_number.has_value();
  const bool has_rate = c.probe.mean_detected_rate.has_value();
  require(has_photon != has_rate,
          "exactly one of probe.mean_photon_number / probe.mean_detected_rate "
          "must be given");
  if (has_photon) require(*c.probe.mean_photon_number > 0, "probe.mean_photon_number must be positive");
  if (has_rate) require(*c.probe.mean_detected_rate > 0, "probe.mean_detected_rate must be positive");
  require(c.probe.detection_efficiency > 0 && c.probe.detection_efficiency <= 1,
          "probe.detection_efficiency must lie in (0, 1]");
}

SidebandPair sideband_lorentzians(double delta, double omega, double kappa) {
  require(kappa > 0, "sideband_lorentzians: kappa must be positive");
  const std::complex<double> i(0.0, 1.0);
  SidebandPair pair;
  pair.upper = 1.0 / (1.0 - 2.0 * i * (delta + omega) / kappa);
  pair.lower = 1.0 / (1.0 + 2.0 * i * (delta - omega) / kappa);
  return pair;
}

GeometryFactors ensemble_geometry(const EnsembleConfig& ensemble, double wavenumber) {
  require(ensemble.atom_number >= 1, "ensemble must contain at least one atom");
  GeometryFactors f;
  if (ensemble.positions) {
    const auto& xi = *ensemble.positions;
    require(!xi.empty(), "ensemble.positions must not be empty");
    double zeta_sum = 0.0;
    double shift_sum = 0.0;
    for (double x : xi) {
      const double s1 = std::sin(wavenumber * x);
      const double s2 = std::sin(2.0 * wavenumber * x);
      shift_sum += s1 * s1;
      zeta_sum += s2 * s2;
    }
    f.zeta = zeta_sum / static_cast<double>(xi.size());
    f.shift_sum = shift_sum;
  } else {
    // Incommensurate lattice: <sin^2> of both the shift and the coupling
    // average to 1/2 over the cloud; the participation factor is exposed as
    // a knob while the dispersive-shift average stays at the statistical 1/2.
    f.zeta = ensemble.statistical_zeta;
    f.shift_sum = 0.5 * ensemble.atom_number;
  }
  return f;
}

DerivedParams derive_params(const PhysicsConfig& config) {
  validate(config);
  DerivedParams d;
  d.config = config;
  d.geometry = ensemble_geometry(config.ensemble, config.atom.wavenumber);

  const double n_atoms = config.ensemble.atom_number;
  const double kappa = config.cavity.kappa;
  const double omega_t = config.trap.omega_t;
  const double k = config.atom.wavenumber;
  const double delta_atom = config.probe.delta_atom;

  // eta = 4 g^2 / (kappa Gamma), inverted for g.
  d.g = 0.5 * std::sqrt(config.cavity.eta * kappa * config.atom.linewidth);
  d.shift_per_photon = d.g * d.g / delta_atom;
  d.opto_coupling = n_atoms * d.shift_per_photon * k;
  d.collective_shift = d.shift_per_photon * d.geometry.shift_sum;
  d.recoil_energy = hbar * hbar * k * k / (2.0 * config.atom.mass);
  d.lamb_dicke_sq = d.recoil_energy / (hbar * omega_t);
  d.m_eff = d.geometry.zeta > 0 ? n_atoms * config.atom.mass / d.geometry.zeta : kInf;
  d.x_zpf = d.geometry.zeta > 0
                ? std::sqrt(hbar * d.geometry.zeta /
                            (2.0 * n_atoms * config.atom.mass * omega_t))
                : 0.0;

  // Drive normalization.  The detected rate sees one mirror (kappa/2 of the
  // total decay) scaled by the detection efficiency; free-space scattering
  // depends on the intracavity photon number only.
  const double out_rate_per_photon = config.probe.detection_efficiency * 0.5 * kappa;
  if (config.probe.mean_photon_number) {
    d.mean_photon = *config.probe.mean_photon_number;
    d.mean_rate = d.mean_photon * out_rate_per_photon;
  } else {
    d.mean_rate = *config.probe.mean_detected_rate;
    d.mean_photon = d.mean_rate / out_rate_per_photon;
  }
  d.gamma_sc =
      d.mean_photon * config.atom.linewidth * d.g * d.g / (delta_atom * delta_atom);

  d.n0 = (kappa / (4.0 * omega_t)) * (kappa / (4.0 * omega_t));
  d.trap_q = config.trap.gamma_m > 0 ? omega_t / config.trap.gamma_m : kInf;
  d.sidebands = sideband_lorentzians(config.probe.delta_cavity, omega_t, kappa);

  const double pref =
      n_atoms * d.gamma_sc * config.cavity.eta * d.lamb_dicke_sq * d.geometry.zeta;
  d.a_plus = pref * norm2(d.sidebands.upper);
  d.a_minus = pref * norm2(d.sidebands.lower);
  d.gamma_c = d.a_plus - d.a_minus;
  return d;
}

double cooling_power(double occupation, const DerivedParams& d) {
  const double pref = d.config.ensemble.atom_number * d.gamma_sc *
                      d.config.cavity.eta * d.recoil_energy * d.geometry.zeta;
  return pref * (occupation * norm2(d.sidebands.upper) -
                 (occupation + 1.0) * norm2(d.sidebands.lower));
}

double cooling_rate_constant(const DerivedParams& d) { return d.gamma_c; }

double equilibrium_occupation(const DerivedParams& d, double recoil_factor) {
  const double gamma_m = d.config.trap.gamma_m;
  const double gamma_tot = d.gamma_c + gamma_m;
  if (gamma_tot <= 0) {
    throw InstabilityError(
        "equilibrium_occupation: configuration is not net dissipative "
        "(gamma_c + gamma_m <= 0)");
  }
  const double a_rec = recoil_factor * d.lamb_dicke_sq * d.gamma_sc;
  return (d.a_minus + a_rec + gamma_m * d.config.trap.n_bath) / gamma_tot;
}

namespace {

// Equilibrium occupation as a function of the drive level (parametrized by
// gamma_c), divided by the static spring-softening factor (1 - gamma_c /
// gamma_bist).  r and rho are the drive-independent ratios A-/gamma_c and
// A_rec/gamma_c.
double softening_corrected_occupation(double gamma_c, double r, double rho,
                                      double gamma_m, double n_bath,
                                      double gamma_bist) {
  const double occ = (gamma_c * (r + rho) + gamma_m * n_bath) / (gamma_c + gamma_m);
  return occ / (1.0 - gamma_c / gamma_bist);
}

}  // namespace

LimitReport cooling_limits(const PhysicsConfig& config) {
  const DerivedParams d = derive_params(config);
  const double n_atoms = config.ensemble.atom_number;
  const double eta = config.cavity.eta;
  const double gamma_m = config.trap.gamma_m;
  const double omega_t = config.trap.omega_t;
  const double kappa = config.cavity.kappa;
  const double delta = config.probe.delta_cavity;

  LimitReport r;
  r.n0 = d.n0;
  r.single_atom_limit = d.n0 + 1.0 / eta;
  r.gamma_c = d.gamma_c;
  r.gamma_c_max = omega_t * omega_t / kappa;
  r.exceeds_bistability = d.gamma_c > r.gamma_c_max;

  const double gamma_tot = d.gamma_c + gamma_m;
  r.bath_limit = gamma_tot > 0 ? config.trap.n_bath * gamma_m / gamma_tot : kInf;

  const double dl2 = norm2(d.sidebands.upper) - norm2(d.sidebands.lower);
  if (d.gamma_c > 0) {
    r.collective_limit = (d.a_minus + d.lamb_dicke_sq * d.gamma_sc) / d.gamma_c;
    r.d_prefactor = (r.collective_limit - r.n0) * n_atoms * eta / (1.0 + r.n0);
  } else {
    r.collective_limit = kInf;
    r.d_prefactor = kInf;
  }

  // Static spring softening: the mean intracavity intensity gradient reduces
  // the trap curvature linearly in the drive, reaching zero at gamma_bist.
  if (dl2 > 0 && delta != 0 && d.geometry.zeta > 0) {
    const double half_kappa = 0.5 * kappa;
    r.gamma_bist = omega_t * dl2 * (half_kappa * half_kappa + delta * delta) /
                   (kappa * std::fabs(delta));
    const double ratio = norm2(d.sidebands.lower) / dl2;       // A- / gamma_c
    const double rho = 1.0 / (n_atoms * eta * d.geometry.zeta * dl2);  // A_rec / gamma_c
    // Coarse scan then golden-section refinement of the unimodal objective.
    const int n_scan = 4096;
    double best_g = r.gamma_bist / n_scan;
    double best_f = kInf;
    for (int i = 1; i < n_scan; ++i) {
      const double g = r.gamma_bist * static_cast<double>(i) / n_scan;
      const double f = softening_corrected_occupation(g, ratio, rho, gamma_m,
                                                      config.trap.n_bath,
                                                      r.gamma_bist);
      if (f < best_f) {
        best_f = f;
        best_g = g;
      }
    }
    double lo = std::max(best_g - r.gamma_bist / n_scan, 0.0);
    double hi = std::min(best_g + r.gamma_bist / n_scan, r.gamma_bist);
    const double golden = 0.6180339887498949;
    double a = hi - golden * (hi - lo);
    double b = lo + golden * (hi - lo);
    double fa = softening_corrected_occupation(a, ratio, rho, gamma_m,
                                               config.trap.n_bath, r.gamma_bist);
    double fb = softening_corrected_occupation(b, ratio, rho, gamma_m,
                                               config.trap.n_bath, r.gamma_bist);
    for (int it = 0; it < 200 && hi - lo > 1e-12 * r.gamma_bist; ++it) {
      if (fa < fb) {
        hi = b;
        b = a;
        fb = fa;
        a = hi - golden * (hi - lo);
        fa = softening_corrected_occupation(a, ratio, rho, gamma_m,
                                            config.trap.n_bath, r.gamma_bist);
      } else {
        lo = a;
        a = b;
        fa = fb;
        b = lo + golden * (hi - lo);
        fb = softening_corrected_occupation(b, ratio, rho, gamma_m,
                                            config.trap.n_bath, r.gamma_bist);
      }
    }
    r.floor_argmin_gamma_c = 0.5 * (lo + hi);
    r.occupation_floor = softening_corrected_occupation(
        r.floor_argmin_gamma_c, ratio, rho, gamma_m, config.trap.n_bath,
        r.gamma_bist);
  } else {
    // Heating-side or uncoupled configuration: no cooling floor exists.
    r.gamma_bist = kInf;
    r.occupation_floor = kInf;
    r.floor_argmin_gamma_c = 0;
  }
  return r;
}

}  // namespace cavsim
