#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uniforce/episode.hpp"

namespace uniforce {

#ifndef UNIFORCE_VERSION
#define UNIFORCE_VERSION "dev"
#endif

inline constexpr const char* kBuildVersion = UNIFORCE_VERSION;

/// Written next to every artifact a subcommand produces. `argv` plus the
/// resolved `config` are enough to rerun the command.
struct RunManifest {
  std::string subcommand;
  std::vector<std::string> argv;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::string version = kBuildVersion;
  std::vector<std::string> outputs;
  std::string started;
  double wall_clock_s = 0.0;
};

inline nlohmann::json to_json(const RunManifest& m) {
  return {{"subcommand", m.subcommand}, {"argv", m.argv},       {"config", m.config},
          {"seed", m.seed},             {"version", m.version}, {"outputs", m.outputs},
          {"started", m.started},       {"wall_clock_s", m.wall_clock_s}};
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
  try {
    RunManifest m;
    m.subcommand = j.at("subcommand").get<std::string>();
    m.argv = j.at("argv").get<std::vector<std::string>>();
    m.config = j.at("config");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.version = j.at("version").get<std::string>();
    m.outputs = j.at("outputs").get<std::vector<std::string>>();
    m.started = j.at("started").get<std::string>();
    m.wall_clock_s = j.at("wall_clock_s").get<double>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("invalid run manifest: ") + e.what());
  }
}

/// Tracks outputs and timing for one subcommand invocation.
class RunRecorder {
 public:
  RunRecorder(std::string subcommand, std::vector<std::string> argv, nlohmann::json config, std::uint64_t seed,
              std::filesystem::path out_dir)
      : out_dir_(std::move(out_dir)), t0_(std::chrono::steady_clock::now()) {
    m_.subcommand = std::move(subcommand);
    m_.argv = std::move(argv);
    m_.config = std::move(config);
    m_.seed = seed;
    m_.started = utc_timestamp();
    std::filesystem::create_directories(out_dir_);
  }

  const std::filesystem::path& out_dir() const { return out_dir_; }

  /// Writes `content` to out_dir/name and records it.
  std::filesystem::path write(const std::string& name, const std::string& content) {
    const auto path = out_dir_ / name;
    write_atomic(path, content);
    add_output(path);
    return path;
  }

  void add_output(const std::filesystem::path& p) { m_.outputs.push_back(p.filename().string()); }

  /// Writes out_dir/<subcommand>.manifest.json and returns its path.
  std::filesystem::path finish() {
    m_.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    const auto path = out_dir_ / (m_.subcommand + ".manifest.json");
    write_atomic(path, to_json(m_).dump(2) + "\n");
    return path;
  }

  const RunManifest& manifest() const { return m_; }

 private:
  RunManifest m_;
  std::filesystem::path out_dir_;
  std::chrono::steady_clock::time_point t0_;
};

}  // namespace uniforce
