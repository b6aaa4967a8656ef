#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cavsim/dynamics.hpp"

namespace cavsim {

// On-disk trace record: a one-line JSON header (format tag, schema version,
// sample period, seed, physics-config hash, series names and length) followed
// by the raw samples as little-endian 64-bit floats, one series after the
// other.  CSV is provided as a human-readable alternative for small runs.
struct TraceBundle {
  double dt = 0;
  double t0 = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<std::pair<std::string, std::vector<double>>> series;

  std::size_t samples() const {
    return series.empty() ? 0 : series.front().second.size();
  }
  const std::vector<double>* find(const std::string& name) const;
};

TraceBundle bundle_trajectory(const Trajectory& traj,
                              const std::string& config_hash);

void write_trace_binary(const std::filesystem::path& path, const TraceBundle& b);
TraceBundle read_trace_binary(const std::filesystem::path& path);

void write_trace_csv(const std::filesystem::path& path, const TraceBundle& b);

}  // namespace cavsim
