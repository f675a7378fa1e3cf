#pragma once

#include <array>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <sstream>
#include <optional>
#include <string>
#include <vector>

#include <openssl/sha.h>

#include <nlohmann/json.hpp>

#include "uniforce/session.hpp"

namespace uniforce {

inline constexpr int kEpisodeSchemaVersion = 1;
inline constexpr const char* kEpisodeExtension = ".episode.jsonl";

/// Low-dimensional stand-in for camera images: what a policy may know about
/// the scene besides proprioception.
struct SceneFeatures {
  double surface_x = 0.0;              // contact surface depth along the inward normal, 0 in free space
  std::array<double, 3> latch{};       // one-hot closed / pressed / sprung, zero without a latch
  double panel = 0.0;                  // latch panel displacement
  double coverage = 0.0;               // task progress in [0, 1]

  static constexpr std::size_t kDim = 6;

  std::array<double, kDim> to_array() const { return {surface_x, latch[0], latch[1], latch[2], panel, coverage}; }
  bool operator==(const SceneFeatures&) const = default;
};

inline SceneFeatures scene_features(const EnvironmentModel& env, const Vec3& x_ee, double coverage = 0.0) {
  SceneFeatures f;
  f.coverage = coverage;
  if (const auto* w = std::get_if<Wall>(&env)) {
    f.surface_x = -w->point.dot(w->normal);
  } else if (const auto* l = std::get_if<SpringLatch>(&env)) {
    f.surface_x = -l->point.dot(l->normal);
    f.latch[static_cast<std::size_t>(l->state)] = 1.0;
    f.panel = panel_displacement(env, x_ee);
  }
  return f;
}

inline nlohmann::json scene_features_to_json(const SceneFeatures& f) {
  return {{"surface_x", f.surface_x}, {"latch", f.latch}, {"panel", f.panel}, {"coverage", f.coverage}};
}

inline SceneFeatures scene_features_from_json(const nlohmann::json& j) {
  SceneFeatures f;
  f.surface_x = j.at("surface_x").get<double>();
  f.latch = j.at("latch").get<std::array<double, 3>>();
  f.panel = j.at("panel").get<double>();
  f.coverage = j.at("coverage").get<double>();
  return f;
}

inline nlohmann::json controller_config_to_json(const ControllerConfig& c) {
  return {{"K", c.impedance.K},
          {"D", c.impedance.D},
          {"compensation_alpha", c.compensation_alpha},
          {"feedforward_alpha", c.feedforward_alpha},
          {"max_setpoint_speed", c.max_setpoint_speed}};
}

inline ControllerConfig controller_config_from_json(const nlohmann::json& j) {
  ControllerConfig c;
  c.impedance.K = j.at("K").get<double>();
  c.impedance.D = j.at("D").get<double>();
  c.compensation_alpha = j.at("compensation_alpha").get<double>();
  c.feedforward_alpha = j.at("feedforward_alpha").get<double>();
  c.max_setpoint_speed = j.at("max_setpoint_speed").get<double>();
  return c;
}

/// Command applied before recording started; replay runs these first.
struct PrefixStep {
  CommandBundle cmd;
  ControlMode mode;
};

struct EpisodeHeader {
  int schema_version = kEpisodeSchemaVersion;
  std::string task;
  std::uint64_t seed = 0;
  SceneSpec scene{};
  PlantParams plant{};  // nominal; randomisation is re-derived from the seed
  ControllerConfig controller{};
  std::string estimator = "oracle";
  std::string timestamp;  // excluded from the episode id
  std::string observation_note = "scene features replace camera images";
  std::vector<PrefixStep> prefix;  // ticks between scene reset and recording start
};

/// One control decision: the state the decision was taken in, what was
/// commanded, and what the estimator reported at that moment.
struct EpisodeFrame {
  double t = 0.0;
  Observation obs;          // last observation in the history at decision time
  CommandBundle cmd;        // executed command
  std::optional<CommandBundle> label;  // intended command when execution was perturbed
  ControlMode mode;
  PlantState state;         // pre-step state
  EstimatorOutput estimate; // force annotation
  SceneFeatures scene;
};

struct EpisodeRecord {
  EpisodeHeader header;
  std::vector<EpisodeFrame> frames;
};

inline nlohmann::json prefix_to_json(const std::vector<PrefixStep>& prefix) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& p : prefix) a.push_back({{"cmd", command_to_json(p.cmd)}, {"mode", mode_to_json(p.mode)}});
  return a;
}

inline std::vector<PrefixStep> prefix_from_json(const nlohmann::json& a) {
  std::vector<PrefixStep> out;
  for (const auto& p : a) out.push_back({command_from_json(p.at("cmd")), mode_from_json(p.at("mode"))});
  return out;
}

inline nlohmann::json header_to_json(const EpisodeHeader& h) {
  return {{"type", "header"},
          {"schema_version", h.schema_version},
          {"task", h.task},
          {"seed", h.seed},
          {"scene", scene_to_json(h.scene)},
          {"plant", plant_params_to_json(h.plant)},
          {"controller", controller_config_to_json(h.controller)},
          {"K", h.controller.impedance.K},
          {"D", h.controller.impedance.D},
          {"dt", h.plant.dt},
          {"estimator", h.estimator},
          {"timestamp", h.timestamp},
          {"observation_note", h.observation_note},
          {"prefix", prefix_to_json(h.prefix)}};
}

inline EpisodeHeader header_from_json(const nlohmann::json& j) {
  EpisodeHeader h;
  if (j.value("type", std::string()) != "header") throw Error(ErrorCode::SchemaMismatch, "first line is not a header");
  h.schema_version = j.at("schema_version").get<int>();
  if (h.schema_version != kEpisodeSchemaVersion)
    throw Error(ErrorCode::SchemaMismatch, "unsupported episode schema version " + std::to_string(h.schema_version));
  h.task = j.at("task").get<std::string>();
  h.seed = j.at("seed").get<std::uint64_t>();
  h.scene = scene_from_json(j.at("scene"));
  h.plant = plant_params_from_json(j.at("plant"));
  h.controller = controller_config_from_json(j.at("controller"));
  h.estimator = j.value("estimator", std::string("oracle"));
  h.timestamp = j.value("timestamp", std::string());
  h.observation_note = j.value("observation_note", std::string());
  if (j.contains("prefix")) h.prefix = prefix_from_json(j.at("prefix"));
  return h;
}

inline nlohmann::json frame_to_json(const EpisodeFrame& f) {
  nlohmann::json j = {{"type", "frame"},
          {"t", f.t},
          {"obs", observation_to_json(f.obs)},
          {"cmd", command_to_json(f.cmd)},
          {"mode", mode_to_json(f.mode)},
          {"state", plant_state_to_json(f.state)},
          {"estimate", estimate_to_json(f.estimate)},
          {"scene", scene_features_to_json(f.scene)}};
  if (f.label) j["label"] = command_to_json(*f.label);
  return j;
}

inline EpisodeFrame frame_from_json(const nlohmann::json& j) {
  if (j.value("type", std::string()) != "frame") throw Error(ErrorCode::SchemaMismatch, "expected a frame line");
  EpisodeFrame f;
  f.t = j.at("t").get<double>();
  f.obs = observation_from_json(j.at("obs"));
  f.cmd = command_from_json(j.at("cmd"));
  if (j.contains("label")) f.label = command_from_json(j.at("label"));
  f.mode = mode_from_json(j.at("mode"));
  f.state = plant_state_from_json(j.at("state"));
  f.estimate = estimate_from_json(j.at("estimate"));
  f.scene = scene_features_from_json(j.at("scene"));
  return f;
}

inline std::string to_jsonl(const EpisodeRecord& rec) {
  std::string out = header_to_json(rec.header).dump();
  out.push_back('\n');
  for (const auto& f : rec.frames) {
    out += frame_to_json(f).dump();
    out.push_back('\n');
  }
  return out;
}

inline EpisodeRecord from_jsonl(const std::string& text) {
  EpisodeRecord rec;
  std::istringstream in(text);
  std::string line;
  bool have_header = false;
  std::size_t line_no = 0;
  try {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (!have_header) {
        rec.header = header_from_json(j);
        have_header = true;
      } else {
        rec.frames.push_back(frame_from_json(j));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, "episode line " + std::to_string(line_no) + ": " + e.what());
  }
  if (!have_header) throw Error(ErrorCode::SchemaMismatch, "episode has no header");
  const double dt = rec.header.plant.dt;
  for (std::size_t i = 1; i < rec.frames.size(); ++i)
    if (std::abs(rec.frames[i].t - rec.frames[i - 1].t - dt) > 1e-9)
      throw Error(ErrorCode::SchemaMismatch, "episode frames are not dt-spaced");
  return rec;
}

inline std::string sha256_hex(const std::string& data) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(data.data()), data.size(), digest);
  std::ostringstream os;
  for (unsigned char c : digest) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(c);
  return os.str();
}

/// Content hash prefix, computed with the timestamp blanked.
inline std::string episode_id(const EpisodeRecord& rec) {
  EpisodeRecord copy = rec;
  copy.header.timestamp.clear();
  return sha256_hex(to_jsonl(copy)).substr(0, 16);
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Writes `content` to `path` via a temporary file in the same directory and
/// an atomic rename.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorCode::StorageFull, "cannot create " + tmp.string());
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    f.flush();
    if (!f) {
      fs::remove(tmp, ec);
      throw Error(ErrorCode::StorageFull, "short write to " + tmp.string());
    }
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorCode::StorageFull, "cannot rename into " + path.string());
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::InvalidArgument, "cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

/// Saves under `dir` as <task>-<id>.episode.jsonl and returns the id.
inline std::string save_episode(const EpisodeRecord& rec, const std::filesystem::path& dir,
                                std::filesystem::path* written = nullptr) {
  const std::string id = episode_id(rec);
  const std::string stem = rec.header.task.empty() ? std::string("episode") : rec.header.task;
  const auto path = dir / (stem + "-" + id + kEpisodeExtension);
  write_atomic(path, to_jsonl(rec));
  if (written) *written = path;
  return id;
}

inline EpisodeRecord load_episode(const std::filesystem::path& path) { return from_jsonl(read_file(path)); }

// ---------------------------------------------------------------------------
// Recording

/// Accumulates frames from a live session.
class EpisodeRecorder {
 public:
  EpisodeRecorder(const Session& session, std::string task, ControllerConfig controller) {
    rec_.header.task = std::move(task);
    rec_.header.seed = session.seed();
    rec_.header.scene = session.scene();
    rec_.header.plant = session.nominal_params();
    rec_.header.controller = controller;
    rec_.header.estimator = session.estimator().kind();
    rec_.header.timestamp = utc_timestamp();
  }

  void add(const EpisodeFrame& f) { rec_.frames.push_back(f); }
  const EpisodeRecord& record() const { return rec_; }
  EpisodeRecord& record() { return rec_; }

 private:
  EpisodeRecord rec_;
};

/// Advances the session by one tick and returns the decision frame for it.
inline EpisodeFrame advance_recorded(Session& session, const ControlMode& mode, const CommandBundle& cmd,
                                     const SceneFeatures& scene, Session::Tick* tick_out = nullptr) {
  EpisodeFrame f;
  f.t = session.state().t;
  f.obs = session.history().back();
  f.cmd = cmd;
  f.mode = mode;
  f.state = session.state();
  f.scene = scene;
  Session::Tick tick = session.advance(mode, cmd);
  f.estimate = tick.estimate;
  if (tick_out) *tick_out = std::move(tick);
  return f;
}

// ---------------------------------------------------------------------------
// Replay

struct ReplayReport {
  std::size_t frames = 0;
  double max_deviation = 0.0;  // max |x_ee replayed - x_ee recorded|, m
  std::size_t worst_frame = 0;
  std::vector<PlantState> states;  // replayed pre-step states
  bool flagged(double tolerance = 1e-9) const { return max_deviation > tolerance; }
};

/// Re-simulates from the header seed, feeding the prefix and then the
/// recorded commands, and compares every pre-step state with the recording.
/// Episodes recorded with a learned estimator need that estimator passed in.
inline ReplayReport replay(const EpisodeRecord& rec, std::shared_ptr<const ForceEstimator> estimator = nullptr) {
  if (rec.header.schema_version != kEpisodeSchemaVersion)
    throw Error(ErrorCode::SchemaMismatch, "unsupported episode schema version");
  if (rec.header.estimator != "oracle" && (!estimator || estimator->kind() != rec.header.estimator))
    throw Error(ErrorCode::SchemaMismatch, "episode was recorded with estimator '" + rec.header.estimator + "'");
  if (rec.header.estimator == "oracle") estimator = nullptr;
  Session session(rec.header.scene, rec.header.seed, rec.header.plant, rec.header.controller, estimator);
  for (const auto& p : rec.header.prefix) session.advance(p.mode, p.cmd);
  ReplayReport report;
  report.frames = rec.frames.size();
  for (std::size_t i = 0; i < rec.frames.size(); ++i) {
    const auto& f = rec.frames[i];
    const double dev = (session.state().x_ee - f.state.x_ee).norm();
    const double dev_checked = std::isfinite(dev) ? dev : std::numeric_limits<double>::infinity();
    if (dev_checked > report.max_deviation) {
      report.max_deviation = dev_checked;
      report.worst_frame = i;
    }
    report.states.push_back(session.state());
    session.advance(f.mode, f.cmd);
  }
  return report;
}

}  // namespace uniforce
