#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "cavsim/analysis.hpp"
#include "cavsim/dynamics.hpp"
#include "cavsim/model.hpp"
#include "cavsim/photodetect.hpp"

namespace cavsim::io {

inline constexpr const char* version_string = "0.1.0";

// Physical dimension a config value is parsed against. Numbers are taken as
// SI (angular frequencies in rad/s); strings carry a unit suffix, with plain
// frequency units on angular-frequency fields converted through 2 pi.
enum class Dimension {
  dimensionless,
  angular_frequency,  // "480 kHz" -> 2 pi 480e3 rad/s; "1e6 rad/s" -> 1e6
  frequency,          // "480 kHz" -> 480e3 Hz (no 2 pi); plain numbers are Hz
  rate,               // "1.6e5 /s"
  time,               // "2 us"
  length,             // "780 nm"
  mass,               // "86.909 u"
  energy,             // "25 uK" (through k_B) or "1e-27 J"
};

double parse_quantity(const nlohmann::json& value, Dimension dim,
                      const std::string& key);

// Analysis plan attached to a scenario: how traces are reduced to
// occupations, decay rates, and spectra.
struct AnalysisPlan {
  bool decay = true;               // variance -> occupation -> decay fit
  bool spectrum = false;           // Welch PSD -> spectral fit
  double variance_window = 2e-6;   // s
  std::size_t variance_stride = 1; // bins
  bool subtract_shot_bias = true;
  double skip_initial = 0;         // s dropped from the head of every trace
  // Decay fits start once the occupation readout falls below this level.
  // The variance readout is linear in the occupation only while the cavity
  // shift stays well inside the fringe; above a few hundred quanta it
  // saturates and would drag the fitted rate down. 0 fits everything.
  double fit_gate_occupation = 300;
  std::size_t psd_segment = 512;   // samples per Welch segment
  PsdWindow psd_window = PsdWindow::hann;
  double fit_band_lo = 0;          // Hz; 0 = automatic around the trap line
  double fit_band_hi = 0;
  SpectrumFitMode fit_mode = SpectrumFitMode::direct;
};

struct ScenarioConfig {
  std::string name = "custom";
  PhysicsConfig physics;
  SimConfig sim;
  NoiseConfig noise;
  DetectorConfig detector;
  DriveConfig drive;
  InitialState initial;
  AnalysisPlan analysis;
  std::size_t traces = 1;
};

// Strict parsers: unknown keys raise ConfigError with the offending path.
PhysicsConfig parse_physics(const nlohmann::json& j, const std::string& path = "physics");
ScenarioConfig parse_scenario(const nlohmann::json& j);
ScenarioConfig load_scenario_file(const std::string& path);

// Canonical serialization: every field explicit, raw SI numbers. Parsing the
// result and serializing again reproduces it byte for byte.
nlohmann::json to_json(const PhysicsConfig& p);
nlohmann::json to_json(const ScenarioConfig& s);

// FNV-1a 64-bit over the canonical serialized form.
std::uint64_t config_hash(const nlohmann::json& canonical);
std::string hash_hex(std::uint64_t h);

}  // namespace cavsim::io
