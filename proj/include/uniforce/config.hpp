#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uniforce/episode.hpp"
#include "uniforce/estimator_data.hpp"
#include "uniforce/experiments.hpp"
#include "uniforce/imitation.hpp"

namespace uniforce {

inline constexpr const char* kOutDirEnv = "UNIFORCE_OUT_DIR";

/// Everything a subcommand may read from a config file. Files are JSON
/// objects overlaid on these defaults; unknown keys are errors.
struct RunConfig {
  PlantParams plant{};
  ControllerConfig controller{};
  TrackEvalOptions track{};
  ForceEvalOptions force{};
  EstimatorPipelineOptions estimator{};
  AblationOptions ablation{};
};

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json levels = nlohmann::json::array();
  for (double l : c.force.levels) levels.push_back(l);
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : c.force.contact_points) points.push_back(vec_to_json(p));
  nlohmann::json tasks = nlohmann::json::array();
  for (TaskKind k : c.ablation.tasks) tasks.push_back(to_string(k));
  return {
      {"plant", plant_params_to_json(c.plant)},
      {"controller", controller_config_to_json(c.controller)},
      {"track_eval", {{"steps", c.track.steps}, {"hold", c.track.hold}, {"tail", c.track.tail}, {"randomize", c.track.randomize}}},
      {"force_eval",
       {{"levels", levels},
        {"contact_points", points},
        {"standoff", c.force.standoff},
        {"settle", c.force.settle},
        {"measure", c.force.measure}}},
      {"estimator",
       {{"train_episodes", c.estimator.train_episodes},
        {"eval_episodes", c.estimator.eval_episodes},
        {"trace_steps", c.estimator.trace.steps},
        {"hidden", c.estimator.hidden},
        {"fit_samples", c.estimator.fit_samples},
        {"ridge", c.estimator.ridge},
        {"steps", c.estimator.steps},
        {"batch", c.estimator.batch},
        {"lr", c.estimator.lr}}},
      {"ablation",
       {{"tasks", tasks},
        {"wipe_episodes", c.ablation.wipe_episodes},
        {"latch_episodes", c.ablation.latch_episodes},
        {"trials", c.ablation.trials},
        {"steps", c.ablation.steps},
        {"batch", c.ablation.batch},
        {"lr", c.ablation.lr}}},
  };
}

namespace detail {

inline bool same_kind(const nlohmann::json& a, const nlohmann::json& b) {
  if (a.is_number() && b.is_number()) return !(a.is_number_integer() && b.is_number_float());
  return a.type() == b.type();
}

/// Overlays `patch` onto `base`, refusing keys or value kinds `base` lacks.
inline void overlay(nlohmann::json& base, const nlohmann::json& patch, const std::string& path) {
  if (!patch.is_object()) throw Error(ErrorCode::ConfigError, (path.empty() ? "config" : path) + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw Error(ErrorCode::ConfigError, "unknown config key '" + where + "'");
    auto& slot = base[key];
    if (slot.is_object()) {
      overlay(slot, value, where);
    } else if (!same_kind(slot, value)) {
      throw Error(ErrorCode::ConfigError, "config key '" + where + "' has the wrong type");
    } else {
      slot = value;
    }
  }
}

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& patch) {
  nlohmann::json j = to_json(RunConfig{});
  detail::overlay(j, patch, "");
  RunConfig c;
  try {
    c.plant = plant_params_from_json(j["plant"]);
    c.controller = controller_config_from_json(j["controller"]);
    const auto& t = j["track_eval"];
    c.track.steps = t["steps"];
    c.track.hold = t["hold"];
    c.track.tail = t["tail"];
    c.track.randomize = t["randomize"];
    const auto& f = j["force_eval"];
    c.force.levels = f["levels"].get<std::vector<double>>();
    c.force.contact_points.clear();
    for (const auto& p : f["contact_points"]) c.force.contact_points.push_back(vec_from_json(p));
    c.force.standoff = f["standoff"];
    c.force.settle = f["settle"];
    c.force.measure = f["measure"];
    const auto& e = j["estimator"];
    c.estimator.train_episodes = e["train_episodes"];
    c.estimator.eval_episodes = e["eval_episodes"];
    c.estimator.trace.steps = e["trace_steps"];
    c.estimator.hidden = e["hidden"].get<std::vector<int>>();
    c.estimator.fit_samples = e["fit_samples"];
    c.estimator.ridge = e["ridge"];
    c.estimator.steps = e["steps"];
    c.estimator.batch = e["batch"];
    c.estimator.lr = e["lr"];
    const auto& a = j["ablation"];
    c.ablation.tasks.clear();
    for (const auto& k : a["tasks"]) c.ablation.tasks.push_back(task_kind_from_string(k.get<std::string>()));
    c.ablation.wipe_episodes = a["wipe_episodes"];
    c.ablation.latch_episodes = a["latch_episodes"];
    c.ablation.trials = a["trials"];
    c.ablation.steps = a["steps"];
    c.ablation.batch = a["batch"];
    c.ablation.lr = a["lr"];
  } catch (const Error& err) {
    throw Error(ErrorCode::ConfigError, err.what());
  } catch (const nlohmann::json::exception& err) {
    throw Error(ErrorCode::ConfigError, err.what());
  }
  try {
    c.plant.validate();
  } catch (const Error& err) {
    throw Error(ErrorCode::ConfigError, err.what());
  }
  if (!(c.controller.impedance.K > 0.0) || !(c.controller.impedance.D > 0.0))
    throw Error(ErrorCode::ConfigError, "controller.K and controller.D must be > 0");
  if (c.track.steps <= 0 || c.estimator.steps < 0 || c.ablation.trials <= 0)
    throw Error(ErrorCode::ConfigError, "step and trial counts must be positive");
  c.track.nominal = c.force.nominal = c.estimator.nominal = c.plant;
  c.track.controller = c.force.controller = c.controller;
  return c;
}

/// Reads a config file. A run manifest is accepted too; its resolved config is used.
inline RunConfig load_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& err) {
    throw Error(ErrorCode::ConfigError, path.string() + ": " + err.what());
  } catch (const Error& err) {
    throw Error(ErrorCode::ConfigError, err.what());
  }
  if (j.is_object() && j.contains("subcommand") && j.contains("config")) j = j["config"];
  return config_from_json(j);
}

/// Output directory: explicit flag, else the environment, else the fallback.
inline std::filesystem::path output_dir(const std::string& flag, const std::filesystem::path& fallback = ".") {
  if (!flag.empty()) return flag;
  if (const char* v = std::getenv(kOutDirEnv); v && *v) return v;
  return fallback;
}

}  // namespace uniforce
