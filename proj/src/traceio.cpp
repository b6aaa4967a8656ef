#include "cavsim/traceio.hpp"

#include <bit>
#include <cstdio>
#include <fstream>

#include "json.hpp"

#include "cavsim/types.hpp"

static_assert(std::endian::native == std::endian::little,
              "trace format assumes a little-endian host");

namespace cavsim {

namespace {
constexpr const char* kFormatTag = "cavsim-trace";
constexpr int kFormatVersion = 1;
}  // namespace

const std::vector<double>* TraceBundle::find(const std::string& name) const {
  for (const auto& [label, values] : series) {
    if (label == name) return &values;
  }
  return nullptr;
}

TraceBundle bundle_trajectory(const Trajectory& traj,
                              const std::string& config_hash) {
  TraceBundle b;
  b.dt = traj.dt;
  b.t0 = traj.t0;
  b.seed = traj.seed;
  b.config_hash = config_hash;
  b.series.emplace_back("x", traj.x);
  b.series.emplace_back("p", traj.p);
  b.series.emplace_back("photon", traj.photon);
  b.series.emplace_back("rate", traj.rate);
  return b;
}

void write_trace_binary(const std::filesystem::path& path, const TraceBundle& b) {
  const std::size_t n = b.samples();
  nlohmann::json header;
  header["format"] = kFormatTag;
  header["version"] = kFormatVersion;
  header["dt"] = b.dt;
  header["t0"] = b.t0;
  header["seed"] = b.seed;
  header["config_hash"] = b.config_hash;
  header["samples"] = n;
  auto names = nlohmann::json::array();
  for (const auto& [label, values] : b.series) {
    if (values.size() != n) {
      throw ConfigError("trace series '" + label + "' length mismatch");
    }
    names.push_back(label);
  }
  header["series"] = names;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open trace file for writing: " + path.string());
  out << header.dump() << '\n';
  for (const auto& [label, values] : b.series) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
  }
  if (!out) throw ConfigError("short write to trace file: " + path.string());
}

TraceBundle read_trace_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open trace file: " + path.string());
  std::string line;
  if (!std::getline(in, line)) {
    throw ConfigError("trace file missing header line: " + path.string());
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad trace header in " + path.string() + ": " + e.what());
  }
  if (header.value("format", "") != kFormatTag ||
      header.value("version", -1) != kFormatVersion) {
    throw ConfigError("unrecognized trace format in " + path.string());
  }
  TraceBundle b;
  b.dt = header.at("dt").get<double>();
  b.t0 = header.at("t0").get<double>();
  b.seed = header.at("seed").get<std::uint64_t>();
  b.config_hash = header.value("config_hash", "");
  const auto n = header.at("samples").get<std::size_t>();
  for (const auto& name : header.at("series")) {
    std::vector<double> values(n);
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != n * sizeof(double)) {
      throw ConfigError("trace file truncated: " + path.string());
    }
    b.series.emplace_back(name.get<std::string>(), std::move(values));
  }
  return b;
}

void write_trace_csv(const std::filesystem::path& path, const TraceBundle& b) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot open CSV file for writing: " + path.string());
  out << "time";
  for (const auto& [label, values] : b.series) out << ',' << label;
  out << '\n';
  char buf[32];
  const std::size_t n = b.samples();
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "%.9g", b.t0 + b.dt * static_cast<double>(i));
    out << buf;
    for (const auto& [label, values] : b.series) {
      std::snprintf(buf, sizeof buf, "%.17g", values[i]);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw ConfigError("short write to CSV file: " + path.string());
}

}  // namespace cavsim
