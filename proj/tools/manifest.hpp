#pragma once

// Run manifest written next to every output bundle.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace xidle::cli {

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

class RunManifest {
public:
  RunManifest(std::string command, std::vector<std::string> args);

  void set_seed(std::uint64_t seed) { seed_ = seed; }
  void set_config(nlohmann::json config) { config_ = std::move(config); }
  void add_input(const std::string& role, const std::filesystem::path& path);

  /// Lists every regular file in dir (sorted by name) and writes
  /// manifest.json there.
  void write(const std::filesystem::path& dir) const;

  static constexpr const char* kVersion = "0.1.0";
  /// Keys that change from run to run and are left out of reproducibility
  /// comparisons.
  static constexpr const char* kWallClockKey = "wall_clock";

private:
  std::string command_;
  std::vector<std::string> args_;
  std::optional<std::uint64_t> seed_;
  nlohmann::json config_;
  nlohmann::json inputs_ = nlohmann::json::array();
  std::chrono::system_clock::time_point started_;
};

}  // namespace xidle::cli
