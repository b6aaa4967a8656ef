#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cavsim/config.hpp"
#include "cavsim/scenario.hpp"

namespace {

namespace cli = cavsim::cli;
namespace io = cavsim::io;

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw cavsim::ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw cavsim::ConfigError("config parse error in " + path + ": " + e.what());
  }
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cavity sideband cooling simulator and analysis toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", io::version_string);

  std::string config_path;
  std::string out_path;
  std::string preset;
  std::string figure;
  std::string run_dir;
  std::optional<std::uint64_t> seed;
  int threads = 1;

  auto add_common = [&](CLI::App* cmd, bool with_preset) {
    cmd->add_option("--config", config_path, "JSON configuration file");
    cmd->add_option("--out", out_path, "output directory (default: $CAVSIM_OUT_ROOT)");
    cmd->add_option("--seed", seed, "master seed override");
    cmd->add_option("--threads", threads, "worker threads for trajectory ensembles");
    if (with_preset) {
      cmd->add_option("--preset", preset, "named scenario preset (fig2, fig3, fig4b)");
    }
  };

  CLI::App* limits = app.add_subcommand("limits", "report cooling limits and bounds");
  add_common(limits, false);

  CLI::App* simulate =
      app.add_subcommand("simulate", "integrate trajectories and write trace files");
  add_common(simulate, true);

  CLI::App* analyze =
      app.add_subcommand("analyze", "run the analysis plan over a simulate output dir");
  analyze->add_option("run_dir", run_dir, "directory containing manifest.json")
      ->required();

  CLI::App* reproduce =
      app.add_subcommand("reproduce", "full simulate+analyze pipeline for a figure");
  reproduce->add_option("figure", figure, "fig2, fig3, or fig4")->required();
  add_common(reproduce, false);

  CLI::App* sweep = app.add_subcommand("sweep", "tabulate limits over a parameter sweep");
  add_common(sweep, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (limits->parsed()) {
      cavsim::PhysicsConfig physics;
      if (!config_path.empty()) {
        physics = io::parse_scenario(load_json(config_path)).physics;
      } else {
        physics = cli::fig4_scenario(false).physics;
      }
      cavsim::validate(physics);
      if (out_path.empty()) return cli::cmd_limits(physics, nullptr, std::cout);
      const auto dir = cli::resolve_out_root(out_path);
      return cli::cmd_limits(physics, &dir, std::cout);
    }

    if (simulate->parsed()) {
      std::vector<io::ScenarioConfig> scenarios;
      if (!preset.empty()) {
        scenarios = cli::preset_scenarios(preset);
      }
      if (!config_path.empty()) {
        scenarios.push_back(io::load_scenario_file(config_path));
      }
      if (scenarios.empty()) {
        throw cavsim::ConfigError("simulate needs --preset or --config");
      }
      const auto root = cli::resolve_out_root(out_path);
      return cli::cmd_simulate(scenarios, root, threads, seed, std::cout);
    }

    if (analyze->parsed()) {
      return cli::cmd_analyze(run_dir, std::cout);
    }

    if (reproduce->parsed()) {
      const auto root = cli::resolve_out_root(out_path) / figure;
      return cli::cmd_reproduce(figure, root, threads, seed, std::cout);
    }

    if (sweep->parsed()) {
      if (config_path.empty()) throw cavsim::ConfigError("sweep needs --config");
      const auto root = cli::resolve_out_root(out_path);
      return cli::cmd_sweep(load_json(config_path), root, std::cout);
    }
  } catch (const cavsim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const cavsim::InstabilityError& e) {
    std::cerr << "instability: " << e.what() << "\n";
    return 3;
  } catch (const cavsim::FitError& e) {
    std::cerr << "fit error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
