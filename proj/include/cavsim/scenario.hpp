#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cavsim/analysis.hpp"
#include "cavsim/config.hpp"
#include "cavsim/dynamics.hpp"
#include "cavsim/model.hpp"

namespace cavsim::cli {

// Output root resolution: explicit --out, else $CAVSIM_OUT_ROOT, else ./cavsim-out.
std::filesystem::path resolve_out_root(const std::string& cli_out);

// ---------------------------------------------------------------------------
// Figure-reproduction presets
// ---------------------------------------------------------------------------

// Large-ensemble cooling-decay scenario at a target per-atom scattering rate.
io::ScenarioConfig fig2_scenario(double gamma_sc_target, std::size_t traces = 10);
// Same conditions, but the oscillation is grown by a heating prelude at the
// mirrored detuning and the analysis starts at the switch; used for the
// averaged-trace (decaying-sinusoid) method, which needs phase-locked traces.
io::ScenarioConfig heat_then_cool_scenario(double gamma_sc_target,
                                           std::size_t traces = 10);
// Rate-scaling scenario: decay at given ensemble size and scattering rate.
io::ScenarioConfig fig3_scenario(double atom_number, double gamma_sc_target,
                                 std::size_t traces = 12);
// Small-ensemble steady-state sideband spectrum, cooling or heating detuning.
io::ScenarioConfig fig4_scenario(bool heating, std::size_t traces = 150);

// Scattering rates swept per figure.
const std::vector<double>& fig2_scattering_rates();
std::vector<double> fig3_scattering_rates(double atom_number);
const std::vector<double>& fig3_atom_numbers();

// Preset bundles for `simulate --preset`: "fig2", "fig3", "fig4b" (alias "fig4").
std::vector<io::ScenarioConfig> preset_scenarios(const std::string& name);

// Rescales the probe drive so the per-atom scattering rate hits the target.
void set_drive_for_gamma_sc(io::ScenarioConfig& sc, double gamma_sc);

// ---------------------------------------------------------------------------
// Pipelines (shared by the CLI and the acceptance suite)
// ---------------------------------------------------------------------------

struct SimulatedScenario {
  io::ScenarioConfig scenario;
  DerivedParams derived;
  std::vector<Trajectory> trajectories;
  double wall_seconds = 0;
};

SimulatedScenario run_simulation(const io::ScenarioConfig& sc, int threads);

struct DecayAnalysis {
  std::vector<double> time;
  std::vector<double> occupation;     // ensemble mean
  std::vector<double> occupation_se;  // standard error across traces
  DecayFitResult fit;                 // A exp(-gamma_exp t) + C
  double gamma_sc = 0;
  double gamma_c = 0;
  double gamma_pred = 0;  // gamma_c + gamma_m
  double clipped_fraction = 0;
};

DecayAnalysis analyze_decay(const SimulatedScenario& run);

struct SpectrumAnalysis {
  Spectrum spectrum;
  SpectrumFitResult fit;
  std::vector<double> model_psd;  // fitted model on the spectrum grid
  double white_reference = 0;
  double predicted_occupation = 0;  // rate-equation steady state
};

SpectrumAnalysis analyze_spectrum(const SimulatedScenario& run);

// ---------------------------------------------------------------------------
// Figure drivers returning structured results (files written when dir given)
// ---------------------------------------------------------------------------

struct Fig2Result {
  std::vector<DecayAnalysis> per_drive;
  std::vector<std::string> names;
};
Fig2Result reproduce_fig2(const std::filesystem::path* out_dir, std::uint64_t seed,
                          int threads, std::size_t traces = 10);

struct Fig3Result {
  struct PerEnsemble {
    double atom_number = 0;
    std::vector<DecayAnalysis> points;
    RateScalingFit fit;  // slope f(N), intercept gamma_m
  };
  std::vector<PerEnsemble> per_ensemble;
  ProportionalFit slope_vs_n;  // f(N) = c N
};
Fig3Result reproduce_fig3(const std::filesystem::path* out_dir, std::uint64_t seed,
                          int threads, std::size_t traces = 12);

struct Fig4Result {
  SpectrumAnalysis cooling;
  SpectrumAnalysis heating;
};
Fig4Result reproduce_fig4(const std::filesystem::path* out_dir, std::uint64_t seed,
                          int threads, std::size_t traces = 150);

// ---------------------------------------------------------------------------
// CLI command bodies (return process exit codes)
// ---------------------------------------------------------------------------

int cmd_limits(const PhysicsConfig& config, const std::filesystem::path* out_dir,
               std::ostream& os);
int cmd_simulate(const std::vector<io::ScenarioConfig>& scenarios,
                 const std::filesystem::path& out_dir, int threads,
                 std::optional<std::uint64_t> seed_override, std::ostream& os);
int cmd_analyze(const std::filesystem::path& run_dir, std::ostream& os);
int cmd_reproduce(const std::string& figure, const std::filesystem::path& out_dir,
                  int threads, std::optional<std::uint64_t> seed_override,
                  std::ostream& os);
int cmd_sweep(const nlohmann::json& sweep_config, const std::filesystem::path& out_dir,
              std::ostream& os);

// Atomic manifest write: temp file then rename, always the last file of a run.
void write_manifest(const std::filesystem::path& dir, const nlohmann::json& manifest);

}  // namespace cavsim::cli
