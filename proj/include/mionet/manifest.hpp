#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mionet/errors.hpp"

namespace mionet {

inline constexpr const char* kVersion = "0.1.0";

/// Reproducibility record written once per artifact directory. Timestamps are
/// informational only; all numeric outputs are functions of the recorded
/// configuration and seeds.
struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::vector<std::string> outputs;

  nlohmann::json to_json() const {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return nlohmann::json{{"format", "mionet-run/1"}, {"command", command},
                          {"config", config},         {"seed", seed},
                          {"version", kVersion},      {"created_utc", stamp},
                          {"outputs", outputs}};
  }
};

inline void write_manifest(const std::filesystem::path& dir, const RunManifest& m) {
  std::filesystem::create_directories(dir);
  std::ofstream os(dir / "manifest.json");
  if (!os) throw DataError("cannot write " + (dir / "manifest.json").string());
  os << m.to_json().dump(2) << '\n';
}

}  // namespace mionet
