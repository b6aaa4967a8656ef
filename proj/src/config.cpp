#include "cavsim/config.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "cavsim/constants.hpp"

namespace cavsim::io {

using nlohmann::json;

namespace {

// Object wrapper that records which keys were consumed and rejects the rest.
class StrictObject {
 public:
  StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected a JSON object");
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string child_path(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) {
        throw ConfigError(path_ + ": unknown key '" + item.key() + "'");
      }
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

struct UnitEntry {
  const char* suffix;
  double factor;
};

const UnitEntry* unit_table(Dimension dim, std::size_t& count) {
  static const UnitEntry angular[] = {{"rad/s", 1.0},
                                      {"GHz", two_pi * 1e9},
                                      {"MHz", two_pi * 1e6},
                                      {"kHz", two_pi * 1e3},
                                      {"Hz", two_pi}};
  static const UnitEntry plain_freq[] = {
      {"GHz", 1e9}, {"MHz", 1e6}, {"kHz", 1e3}, {"Hz", 1.0}};
  static const UnitEntry rate[] = {{"/s", 1.0}, {"1/s", 1.0}, {"/ms", 1e3}, {"/us", 1e6}};
  static const UnitEntry time_u[] = {{"s", 1.0}, {"ms", 1e-3}, {"us", 1e-6},
                                     {"\xc2\xb5s", 1e-6}, {"ns", 1e-9}, {"ps", 1e-12}};
  static const UnitEntry length[] = {{"m", 1.0},  {"cm", 1e-2}, {"mm", 1e-3},
                                     {"um", 1e-6}, {"\xc2\xb5m", 1e-6},
                                     {"nm", 1e-9}, {"pm", 1e-12}};
  static const UnitEntry mass[] = {{"kg", 1.0},
                                   {"g", 1e-3},
                                   {"u", atomic_mass_unit},
                                   {"amu", atomic_mass_unit},
                                   {"Da", atomic_mass_unit}};
  static const UnitEntry energy[] = {{"J", 1.0},
                                     {"K", k_boltzmann},
                                     {"mK", k_boltzmann * 1e-3},
                                     {"uK", k_boltzmann * 1e-6},
                                     {"\xc2\xb5K", k_boltzmann * 1e-6}};
  switch (dim) {
    case Dimension::angular_frequency: count = std::size(angular); return angular;
    case Dimension::frequency: count = std::size(plain_freq); return plain_freq;
    case Dimension::rate: count = std::size(rate); return rate;
    case Dimension::time: count = std::size(time_u); return time_u;
    case Dimension::length: count = std::size(length); return length;
    case Dimension::mass: count = std::size(mass); return mass;
    case Dimension::energy: count = std::size(energy); return energy;
    case Dimension::dimensionless: count = 0; return nullptr;
  }
  count = 0;
  return nullptr;
}

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace

double parse_quantity(const json& value, Dimension dim, const std::string& key) {
  if (value.is_number()) return value.get<double>();
  if (!value.is_string()) {
    throw ConfigError(key + ": expected a number (SI) or a unit-suffixed string");
  }
  const std::string text = trim(value.get<std::string>());
  const char* begin = text.c_str();
  char* end = nullptr;
  const double number = std::strtod(begin, &end);
  if (end == begin) throw ConfigError(key + ": cannot parse '" + text + "' as a quantity");
  const std::string unit = trim(std::string(end));
  if (unit.empty()) {
    throw ConfigError(key + ": string values must carry a unit ('" + text + "')");
  }
  if (dim == Dimension::dimensionless) {
    throw ConfigError(key + ": dimensionless field cannot take a unit ('" + text + "')");
  }
  std::size_t count = 0;
  const UnitEntry* table = unit_table(dim, count);
  for (std::size_t i = 0; i < count; ++i) {
    if (unit == table[i].suffix) return number * table[i].factor;
  }
  throw ConfigError(key + ": unknown unit '" + unit + "'");
}

namespace {

double get_quantity(StrictObject& obj, const std::string& key, Dimension dim,
                    double fallback) {
  const json* v = obj.find(key);
  return v ? parse_quantity(*v, dim, obj.child_path(key)) : fallback;
}

bool get_bool(StrictObject& obj, const std::string& key, bool fallback) {
  const json* v = obj.find(key);
  if (!v) return fallback;
  if (!v->is_boolean()) throw ConfigError(obj.child_path(key) + ": expected a boolean");
  return v->get<bool>();
}

std::string get_string(StrictObject& obj, const std::string& key,
                       const std::string& fallback) {
  const json* v = obj.find(key);
  if (!v) return fallback;
  if (!v->is_string()) throw ConfigError(obj.child_path(key) + ": expected a string");
  return v->get<std::string>();
}

std::uint64_t get_uint(StrictObject& obj, const std::string& key, std::uint64_t fallback) {
  const json* v = obj.find(key);
  if (!v) return fallback;
  if (!v->is_number_unsigned() && !v->is_number_integer()) {
    throw ConfigError(obj.child_path(key) + ": expected a non-negative integer");
  }
  if (v->is_number_integer() && v->get<std::int64_t>() < 0) {
    throw ConfigError(obj.child_path(key) + ": expected a non-negative integer");
  }
  return v->get<std::uint64_t>();
}

}  // namespace

PhysicsConfig parse_physics(const json& j, const std::string& path) {
  PhysicsConfig p;
  StrictObject root(j, path);

  if (const json* atom = root.find("atom")) {
    StrictObject o(*atom, root.child_path("atom"));
    p.atom.mass = get_quantity(o, "mass", Dimension::mass, p.atom.mass);
    p.atom.linewidth =
        get_quantity(o, "linewidth", Dimension::angular_frequency, p.atom.linewidth);
    const json* wn = o.find("wavenumber");
    const json* wl = o.find("wavelength");
    if (wn && wl) {
      throw ConfigError(o.child_path("wavenumber") +
                        ": give either wavenumber or wavelength, not both");
    }
    if (wn) {
      p.atom.wavenumber = parse_quantity(*wn, Dimension::dimensionless,
                                         o.child_path("wavenumber"));
    } else if (wl) {
      p.atom.wavenumber =
          two_pi / parse_quantity(*wl, Dimension::length, o.child_path("wavelength"));
    }
    o.finish();
  }

  if (const json* cav = root.find("cavity")) {
    StrictObject o(*cav, root.child_path("cavity"));
    p.cavity.kappa = get_quantity(o, "kappa", Dimension::angular_frequency, p.cavity.kappa);
    p.cavity.eta = get_quantity(o, "eta", Dimension::dimensionless, p.cavity.eta);
    if (const json* w = o.find("waist")) {
      p.cavity.waist = parse_quantity(*w, Dimension::length, o.child_path("waist"));
    }
    o.finish();
  }

  if (const json* trap = root.find("trap")) {
    StrictObject o(*trap, root.child_path("trap"));
    p.trap.omega_t =
        get_quantity(o, "omega_t", Dimension::angular_frequency, p.trap.omega_t);
    if (const json* d = o.find("depth")) {
      p.trap.depth = parse_quantity(*d, Dimension::energy, o.child_path("depth"));
    }
    p.trap.gamma_m = get_quantity(o, "gamma_m", Dimension::rate, p.trap.gamma_m);
    p.trap.n_bath = get_quantity(o, "n_bath", Dimension::dimensionless, p.trap.n_bath);
    o.finish();
  }

  if (const json* ens = root.find("ensemble")) {
    StrictObject o(*ens, root.child_path("ensemble"));
    p.ensemble.atom_number =
        get_quantity(o, "atom_number", Dimension::dimensionless, p.ensemble.atom_number);
    if (const json* pos = o.find("positions")) {
      if (!pos->is_array()) {
        throw ConfigError(o.child_path("positions") + ": expected an array");
      }
      std::vector<double> xs;
      xs.reserve(pos->size());
      for (std::size_t i = 0; i < pos->size(); ++i) {
        xs.push_back(parse_quantity((*pos)[i], Dimension::length,
                                    o.child_path("positions")));
      }
      p.ensemble.positions = std::move(xs);
    }
    p.ensemble.statistical_zeta = get_quantity(o, "statistical_zeta",
                                               Dimension::dimensionless,
                                               p.ensemble.statistical_zeta);
    o.finish();
  }

  if (const json* probe = root.find("probe")) {
    StrictObject o(*probe, root.child_path("probe"));
    p.probe.delta_atom =
        get_quantity(o, "delta_atom", Dimension::angular_frequency, p.probe.delta_atom);
    p.probe.delta_cavity = get_quantity(o, "delta_cavity", Dimension::angular_frequency,
                                        p.probe.delta_cavity);
    if (const json* v = o.find("mean_photon_number")) {
      p.probe.mean_photon_number =
          parse_quantity(*v, Dimension::dimensionless, o.child_path("mean_photon_number"));
    }
    if (const json* v = o.find("mean_detected_rate")) {
      p.probe.mean_detected_rate =
          parse_quantity(*v, Dimension::rate, o.child_path("mean_detected_rate"));
    }
    p.probe.detection_efficiency =
        get_quantity(o, "detection_efficiency", Dimension::dimensionless,
                     p.probe.detection_efficiency);
    o.finish();
  }

  root.finish();
  return p;
}

namespace {

SimConfig parse_sim(const json& j, const std::string& path) {
  SimConfig s;
  StrictObject o(j, path);
  s.dt = get_quantity(o, "dt", Dimension::time, s.dt);
  s.duration = get_quantity(o, "duration", Dimension::time, s.duration);
  s.seed = get_uint(o, "seed", s.seed);
  const std::string scheme = get_string(o, "scheme", "semi_implicit");
  if (scheme == "semi_implicit") {
    s.scheme = Scheme::semi_implicit;
  } else if (scheme == "euler_maruyama") {
    s.scheme = Scheme::euler_maruyama;
  } else {
    throw ConfigError(path + ".scheme: unknown scheme '" + scheme + "'");
  }
  s.record_stride = static_cast<std::size_t>(get_uint(o, "record_stride", s.record_stride));
  s.coupling_scale =
      get_quantity(o, "coupling_scale", Dimension::dimensionless, s.coupling_scale);
  s.coupling_cap_kappa = get_quantity(o, "coupling_cap_kappa", Dimension::dimensionless,
                                      s.coupling_cap_kappa);
  s.overflow_occupation = get_quantity(o, "overflow_occupation", Dimension::dimensionless,
                                       s.overflow_occupation);
  o.finish();
  return s;
}

NoiseConfig parse_noise(const json& j, const std::string& path) {
  NoiseConfig n;
  StrictObject o(j, path);
  n.recoil_factor =
      get_quantity(o, "recoil_factor", Dimension::dimensionless, n.recoil_factor);
  n.include_zero_point = get_bool(o, "include_zero_point", n.include_zero_point);
  n.backaction_noise = get_bool(o, "backaction_noise", n.backaction_noise);
  if (const json* v = o.find("phase_linewidth")) {
    if (v->is_string() && trim(v->get<std::string>()) == "auto") {
      n.phase_linewidth = -1;
    } else if (v->is_string() && trim(v->get<std::string>()) == "off") {
      n.phase_linewidth = 0;
    } else {
      n.phase_linewidth =
          parse_quantity(*v, Dimension::angular_frequency, path + ".phase_linewidth");
    }
  }
  n.phase_tau = get_quantity(o, "phase_tau", Dimension::time, n.phase_tau);
  o.finish();
  return n;
}

DetectorConfig parse_detector(const json& j, const std::string& path) {
  DetectorConfig d;
  StrictObject o(j, path);
  d.bin_width = get_quantity(o, "bin_width", Dimension::time, d.bin_width);
  d.quantum_efficiency = get_quantity(o, "quantum_efficiency", Dimension::dimensionless,
                                      d.quantum_efficiency);
  if (const json* v = o.find("electronic_noise_psd")) {
    if (v->is_string() && trim(v->get<std::string>()) == "auto") {
      d.electronic_noise_psd = -1;
    } else if (v->is_string() && trim(v->get<std::string>()) == "off") {
      d.electronic_noise_psd = 0;
    } else {
      d.electronic_noise_psd =
          parse_quantity(*v, Dimension::dimensionless, path + ".electronic_noise_psd");
    }
  }
  const std::string mode = get_string(o, "mode", "auto");
  if (mode == "poisson") {
    d.mode = DetectionMode::poisson;
  } else if (mode == "gaussian") {
    d.mode = DetectionMode::gaussian;
  } else if (mode == "auto") {
    d.mode = DetectionMode::auto_mode;
  } else {
    throw ConfigError(path + ".mode: unknown detection mode '" + mode + "'");
  }
  d.gaussian_threshold = get_quantity(o, "gaussian_threshold", Dimension::dimensionless,
                                      d.gaussian_threshold);
  o.finish();
  return d;
}

DriveConfig parse_drive(const json& j, const std::string& path) {
  DriveConfig d;
  StrictObject o(j, path);
  if (const json* v = o.find("delta_initial")) {
    d.delta_initial =
        parse_quantity(*v, Dimension::angular_frequency, path + ".delta_initial");
  }
  d.t_switch = get_quantity(o, "t_switch", Dimension::time, d.t_switch);
  if (const json* v = o.find("gamma_m_initial")) {
    d.gamma_m_initial = parse_quantity(*v, Dimension::rate, path + ".gamma_m_initial");
  }
  if (const json* v = o.find("photon_initial")) {
    d.photon_initial =
        parse_quantity(*v, Dimension::dimensionless, path + ".photon_initial");
  }
  o.finish();
  return d;
}

InitialState parse_initial(const json& j, const std::string& path) {
  InitialState s;
  StrictObject o(j, path);
  s.thermal_occupation = get_quantity(o, "thermal_occupation", Dimension::dimensionless,
                                      s.thermal_occupation);
  s.coherent_quanta =
      get_quantity(o, "coherent_quanta", Dimension::dimensionless, s.coherent_quanta);
  s.coherent_phase =
      get_quantity(o, "coherent_phase", Dimension::dimensionless, s.coherent_phase);
  s.random_phase = get_bool(o, "random_phase", s.random_phase);
  o.finish();
  return s;
}

AnalysisPlan parse_analysis(const json& j, const std::string& path) {
  AnalysisPlan a;
  StrictObject o(j, path);
  a.decay = get_bool(o, "decay", a.decay);
  a.spectrum = get_bool(o, "spectrum", a.spectrum);
  a.variance_window =
      get_quantity(o, "variance_window", Dimension::time, a.variance_window);
  a.variance_stride =
      static_cast<std::size_t>(get_uint(o, "variance_stride", a.variance_stride));
  a.subtract_shot_bias = get_bool(o, "subtract_shot_bias", a.subtract_shot_bias);
  a.skip_initial = get_quantity(o, "skip_initial", Dimension::time, a.skip_initial);
  a.fit_gate_occupation = get_quantity(o, "fit_gate_occupation",
                                       Dimension::dimensionless,
                                       a.fit_gate_occupation);
  a.psd_segment = static_cast<std::size_t>(get_uint(o, "psd_segment", a.psd_segment));
  const std::string win = get_string(
      o, "psd_window", a.psd_window == PsdWindow::hann ? "hann" : "rectangular");
  if (win == "hann") {
    a.psd_window = PsdWindow::hann;
  } else if (win == "rectangular") {
    a.psd_window = PsdWindow::rectangular;
  } else {
    throw ConfigError(path + ".psd_window: unknown window '" + win + "'");
  }
  // Fit band given as ordinary frequencies in Hz (matching the spectrum axis).
  a.fit_band_lo = get_quantity(o, "fit_band_lo", Dimension::frequency, a.fit_band_lo);
  a.fit_band_hi = get_quantity(o, "fit_band_hi", Dimension::frequency, a.fit_band_hi);
  const std::string mode = get_string(
      o, "fit_mode", a.fit_mode == SpectrumFitMode::direct ? "direct" : "bath");
  if (mode == "direct") {
    a.fit_mode = SpectrumFitMode::direct;
  } else if (mode == "bath") {
    a.fit_mode = SpectrumFitMode::bath;
  } else {
    throw ConfigError(path + ".fit_mode: unknown mode '" + mode + "'");
  }
  o.finish();
  return a;
}

}  // namespace

ScenarioConfig parse_scenario(const json& j) {
  ScenarioConfig s;
  StrictObject root(j, "scenario");
  s.name = get_string(root, "name", s.name);
  if (const json* v = root.find("physics")) s.physics = parse_physics(*v, "physics");
  if (const json* v = root.find("sim")) s.sim = parse_sim(*v, "sim");
  if (const json* v = root.find("noise")) s.noise = parse_noise(*v, "noise");
  if (const json* v = root.find("detector")) s.detector = parse_detector(*v, "detector");
  if (const json* v = root.find("drive")) s.drive = parse_drive(*v, "drive");
  if (const json* v = root.find("initial")) s.initial = parse_initial(*v, "initial");
  if (const json* v = root.find("analysis")) s.analysis = parse_analysis(*v, "analysis");
  s.traces = static_cast<std::size_t>(get_uint(root, "traces", s.traces));
  root.finish();
  validate(s.physics);
  return s;
}

ScenarioConfig load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  return parse_scenario(j);
}

json to_json(const PhysicsConfig& p) {
  json atom{{"mass", p.atom.mass},
            {"linewidth", p.atom.linewidth},
            {"wavenumber", p.atom.wavenumber}};
  json cavity{{"kappa", p.cavity.kappa}, {"eta", p.cavity.eta}};
  if (p.cavity.waist) cavity["waist"] = *p.cavity.waist;
  json trap{{"omega_t", p.trap.omega_t},
            {"gamma_m", p.trap.gamma_m},
            {"n_bath", p.trap.n_bath}};
  if (p.trap.depth) trap["depth"] = *p.trap.depth;
  json ensemble{{"atom_number", p.ensemble.atom_number},
                {"statistical_zeta", p.ensemble.statistical_zeta}};
  if (p.ensemble.positions) ensemble["positions"] = *p.ensemble.positions;
  json probe{{"delta_atom", p.probe.delta_atom},
             {"delta_cavity", p.probe.delta_cavity},
             {"detection_efficiency", p.probe.detection_efficiency}};
  if (p.probe.mean_photon_number) probe["mean_photon_number"] = *p.probe.mean_photon_number;
  if (p.probe.mean_detected_rate) probe["mean_detected_rate"] = *p.probe.mean_detected_rate;
  return json{{"atom", atom},
              {"cavity", cavity},
              {"trap", trap},
              {"ensemble", ensemble},
              {"probe", probe}};
}

json to_json(const ScenarioConfig& s) {
  json sim{{"dt", s.sim.dt},
           {"duration", s.sim.duration},
           {"seed", s.sim.seed},
           {"scheme", s.sim.scheme == Scheme::semi_implicit ? "semi_implicit"
                                                            : "euler_maruyama"},
           {"record_stride", s.sim.record_stride},
           {"coupling_scale", s.sim.coupling_scale},
           {"coupling_cap_kappa", s.sim.coupling_cap_kappa},
           {"overflow_occupation", s.sim.overflow_occupation}};
  json noise{{"recoil_factor", s.noise.recoil_factor},
             {"include_zero_point", s.noise.include_zero_point},
             {"backaction_noise", s.noise.backaction_noise},
             {"phase_linewidth", s.noise.phase_linewidth},
             {"phase_tau", s.noise.phase_tau}};
  json detector{{"bin_width", s.detector.bin_width},
                {"quantum_efficiency", s.detector.quantum_efficiency},
                {"electronic_noise_psd", s.detector.electronic_noise_psd},
                {"mode", s.detector.mode == DetectionMode::poisson    ? "poisson"
                         : s.detector.mode == DetectionMode::gaussian ? "gaussian"
                                                                      : "auto"},
                {"gaussian_threshold", s.detector.gaussian_threshold}};
  json drive{{"t_switch", s.drive.t_switch}};
  if (s.drive.delta_initial) drive["delta_initial"] = *s.drive.delta_initial;
  if (s.drive.gamma_m_initial) drive["gamma_m_initial"] = *s.drive.gamma_m_initial;
  if (s.drive.photon_initial) drive["photon_initial"] = *s.drive.photon_initial;
  json initial{{"thermal_occupation", s.initial.thermal_occupation},
               {"coherent_quanta", s.initial.coherent_quanta},
               {"coherent_phase", s.initial.coherent_phase},
               {"random_phase", s.initial.random_phase}};
  json analysis{{"decay", s.analysis.decay},
                {"spectrum", s.analysis.spectrum},
                {"variance_window", s.analysis.variance_window},
                {"variance_stride", s.analysis.variance_stride},
                {"subtract_shot_bias", s.analysis.subtract_shot_bias},
                {"skip_initial", s.analysis.skip_initial},
                {"fit_gate_occupation", s.analysis.fit_gate_occupation},
                {"psd_segment", s.analysis.psd_segment},
                {"psd_window",
                 s.analysis.psd_window == PsdWindow::hann ? "hann" : "rectangular"},
                {"fit_band_lo", s.analysis.fit_band_lo},
                {"fit_band_hi", s.analysis.fit_band_hi},
                {"fit_mode",
                 s.analysis.fit_mode == SpectrumFitMode::direct ? "direct" : "bath"}};
  return json{{"name", s.name},       {"physics", to_json(s.physics)},
              {"sim", sim},           {"noise", noise},
              {"detector", detector}, {"drive", drive},
              {"initial", initial},   {"analysis", analysis},
              {"traces", s.traces}};
}

std::uint64_t config_hash(const json& canonical) {
  const std::string dump = canonical.dump();
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace cavsim::io
