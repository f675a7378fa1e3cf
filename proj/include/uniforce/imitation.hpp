#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "uniforce/episode.hpp"
#include "uniforce/estimator.hpp"
#include "uniforce/mlp.hpp"
#include "uniforce/scheduler.hpp"
#include "uniforce/session.hpp"

namespace uniforce {

enum class TaskKind { WipeWall, PushLatch, PushLatchOccluded };

inline const char* to_string(TaskKind k) {
  switch (k) {
    case TaskKind::WipeWall: return "wipe";
    case TaskKind::PushLatch: return "latch";
    case TaskKind::PushLatchOccluded: return "latch-occluded";
  }
  return "wipe";
}

inline TaskKind task_kind_from_string(const std::string& s) {
  if (s == "wipe") return TaskKind::WipeWall;
  if (s == "latch") return TaskKind::PushLatch;
  if (s == "latch-occluded") return TaskKind::PushLatchOccluded;
  throw Error(ErrorCode::InvalidArgument, "unknown task '" + s + "'");
}

struct TaskSpec {
  TaskKind kind = TaskKind::WipeWall;
  // WipeWall
  double band_lo = 10.0;  // N
  double band_hi = 30.0;  // N
  double span = 0.3;      // m, lateral
  double coverage_target = 0.9;
  double band_fraction = 0.8;  // of contact ticks
  double coverage_bin = 0.01;  // m
  // PushLatch
  double trigger_lo = 4.0;   // N
  double trigger_hi = 20.0;  // N
  double latch_travel = 0.02;
};

inline TaskSpec default_task(TaskKind kind) {
  TaskSpec s;
  s.kind = kind;
  return s;
}

/// Seed-determined layout of one task episode plus the expert's setpoints.
struct TaskInstance {
  SceneSpec scene;
  double surface_x = 0.6;
  double y0 = -0.15;
  double z0 = 0.0;
  double trigger = 10.0;
  double expert_depth = 0.0;   // command this far behind the surface
  double expert_force = 18.0;  // N pressing command
  double lead = 0.01;          // wipe: lateral lead of the command over the EE
  double retract = 0.12;       // latch: back-off distance after pressing
};

inline constexpr std::uint64_t kSaltTask = 20;

inline TaskInstance make_instance(const TaskSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(seed, kSaltTask));
  TaskInstance inst;
  inst.surface_x = rng.uniform(0.55, 0.65);
  inst.z0 = rng.uniform(-0.1, 0.1);
  inst.scene.label = to_string(spec.kind);
  inst.scene.randomize = true;
  if (spec.kind == TaskKind::WipeWall) {
    inst.y0 = rng.uniform(-0.2, -0.1);
    inst.expert_depth = 0.02;
    inst.expert_force = 18.0;
    Wall w;
    w.point = Vec3(inst.surface_x, 0.0, 0.0);
    inst.scene.env = w;
  } else {
    inst.y0 = rng.uniform(-0.1, 0.1);
    inst.trigger = rng.uniform(spec.trigger_lo, spec.trigger_hi);
    inst.expert_depth = 0.0;
    inst.expert_force = 25.0;
    SpringLatch l;
    l.point = Vec3(inst.surface_x, 0.0, 0.0);
    l.trigger_force = inst.trigger;
    l.travel = spec.latch_travel;
    inst.scene.env = l;
  }
  inst.scene.x_home = Vec3(inst.surface_x - 0.15, inst.y0, inst.z0);
  return inst;
}

/// Success bookkeeping and the scene features a policy is allowed to see.
class TaskTracker {
 public:
  TaskTracker(TaskSpec spec, TaskInstance inst) : spec_(spec), inst_(std::move(inst)) {
    bins_.assign(static_cast<std::size_t>(std::ceil(spec_.span / spec_.coverage_bin - 1e-9)), false);
  }

  /// Consumes the state produced by one tick and the environment after it.
  void update(const PlantState& s, const EnvironmentModel& env) {
    const double f = s.contact_force.norm();
    peak_force_ = std::max(peak_force_, f);
    if (f > 0.0) {
      ++contact_ticks_;
      if (f >= spec_.band_lo && f <= spec_.band_hi) ++band_ticks_;
      const double rel = s.x_ee.y() - inst_.y0;
      if (rel >= 0.0) {
        const auto b = static_cast<std::size_t>(rel / spec_.coverage_bin);
        if (b < bins_.size()) bins_[b] = true;
      }
    }
    if (const auto* l = std::get_if<SpringLatch>(&env)) {
      if (l->state == LatchState::Pressed) pressed_ = true;
      if (l->state == LatchState::Sprung && pressed_) released_ = true;
    }
    visible_ = compute_features(s, env, f > 0.0);
  }

  /// Features before any tick.
  void start(const PlantState& s, const EnvironmentModel& env) { visible_ = compute_features(s, env, false); }

  double coverage() const {
    if (bins_.empty()) return 0.0;
    std::size_t n = 0;
    for (bool b : bins_) n += b ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(bins_.size());
  }

  double band_occupancy() const {
    return contact_ticks_ ? static_cast<double>(band_ticks_) / static_cast<double>(contact_ticks_) : 0.0;
  }

  bool success() const {
    if (spec_.kind == TaskKind::WipeWall)
      return coverage() >= spec_.coverage_target && band_occupancy() >= spec_.band_fraction;
    return pressed_ && released_;
  }

  /// Wipe episodes end once the sweep is covered; latch episodes once released.
  bool finished() const {
    if (spec_.kind == TaskKind::WipeWall) return coverage() >= spec_.coverage_target;
    return released_;
  }

  const SceneFeatures& features() const { return visible_; }
  bool pressed() const { return pressed_; }
  bool released() const { return released_; }
  bool contacted() const { return contact_ticks_ > 0; }
  double peak_force() const { return peak_force_; }
  std::size_t contact_ticks() const { return contact_ticks_; }
  const TaskSpec& spec() const { return spec_; }
  const TaskInstance& instance() const { return inst_; }

 private:
  SceneFeatures compute_features(const PlantState& s, const EnvironmentModel& env, bool contact_now) {
    SceneFeatures f = scene_features(env, s.x_ee, spec_.kind == TaskKind::WipeWall ? coverage() : 0.0);
    if (spec_.kind == TaskKind::PushLatchOccluded) {
      if (frozen_) return *frozen_;
      if (contact_now) frozen_ = f;
    }
    return f;
  }

  TaskSpec spec_;
  TaskInstance inst_;
  std::vector<bool> bins_;
  std::size_t contact_ticks_ = 0;
  std::size_t band_ticks_ = 0;
  double peak_force_ = 0.0;
  bool pressed_ = false;
  bool released_ = false;
  SceneFeatures visible_{};
  std::optional<SceneFeatures> frozen_;
};

/// Scripted demonstrator. It reads the true scene (including the latch
/// state), never the possibly frozen features.
inline CommandBundle expert_command(const TaskTracker& tracker, const PlantState& s, const EnvironmentModel& env) {
  const TaskInstance& in = tracker.instance();
  CommandBundle c;
  if (tracker.spec().kind == TaskKind::WipeWall) {
    double y = in.y0;
    if (tracker.contacted()) y = std::min(s.x_ee.y() + in.lead, in.y0 + tracker.spec().span + 0.02);
    c.x_ee_cmd = Vec3(in.surface_x + in.expert_depth, y, in.z0);
    c.F_ee_cmd = Vec3(in.expert_force, 0.0, 0.0);
    return c;
  }
  const auto* latch = std::get_if<SpringLatch>(&env);
  const bool closed = latch && latch->state == LatchState::Closed;
  if (closed) {
    c.x_ee_cmd = Vec3(in.surface_x + in.expert_depth, in.y0, in.z0);
    c.F_ee_cmd = Vec3(in.expert_force, 0.0, 0.0);
  } else {
    c.x_ee_cmd = Vec3(in.surface_x - in.retract, in.y0, in.z0);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Policy features

inline constexpr std::size_t kBcWindow = 4;
inline constexpr std::size_t kBcFrameDim = 3 + 3 + SceneFeatures::kDim + 3;

/// Per-decision features: EE position, EE velocity, scene features, F_hat
/// (zeroed for the position-only policy).
inline std::array<float, kBcFrameDim> bc_frame_features(const PlantState& s, const SceneFeatures& scene,
                                                        const Vec3& F_hat, bool include_force) {
  std::array<float, kBcFrameDim> f{};
  std::size_t k = 0;
  for (int i = 0; i < 3; ++i) f[k++] = static_cast<float>(s.x_ee[i]);
  for (int i = 0; i < 3; ++i) f[k++] = static_cast<float>(s.v_ee[i]);
  for (double v : scene.to_array()) f[k++] = static_cast<float>(v);
  for (int i = 0; i < 3; ++i) f[k++] = include_force ? static_cast<float>(F_hat[i]) : 0.0f;
  return f;
}

// ---------------------------------------------------------------------------
// Dataset

struct BCDataset {
  bool include_force = true;
  std::size_t window = kBcWindow;
  Mlp<float>::Mat X;  // (window * frame_dim) x samples
  Mlp<float>::Mat T;  // (3 or 6) x samples
  std::vector<std::size_t> episode_of;  // episode index per sample
  std::vector<bool> is_validation;      // per episode
  std::vector<float> input_lo, input_hi;  // fitted on the train split
  std::vector<float> output_scale;

  std::size_t samples() const { return static_cast<std::size_t>(X.cols()); }
  std::size_t outputs() const { return include_force ? 6 : 3; }

  std::vector<std::size_t> split_indices(bool validation) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples(); ++i)
      if (is_validation[episode_of[i]] == validation) out.push_back(i);
    return out;
  }

  std::string hash() const {
    std::string bytes(reinterpret_cast<const char*>(X.data()), static_cast<std::size_t>(X.size()) * sizeof(float));
    bytes.append(reinterpret_cast<const char*>(T.data()), static_cast<std::size_t>(T.size()) * sizeof(float));
    for (float v : input_lo) bytes.append(reinterpret_cast<const char*>(&v), sizeof v);
    for (float v : input_hi) bytes.append(reinterpret_cast<const char*>(&v), sizeof v);
    return sha256_hex(bytes);
  }
};

inline std::vector<float> bc_output_scale(bool include_force, const CommandRanges& ranges = {}) {
  const float r = static_cast<float>(ranges.r.hi);
  const float f = static_cast<float>(std::max(std::abs(ranges.F_ee.lo), std::abs(ranges.F_ee.hi)));
  if (include_force) return {r, r, r, f, f, f};
  return {r, r, r};
}

/// Windows of `window` frames; target = the command of the last frame.
/// Every `validation_every`-th episode (by index) goes to validation.
inline BCDataset build_dataset(const std::vector<EpisodeRecord>& episodes, bool include_force,
                               std::size_t validation_every = 5, std::size_t window = kBcWindow) {
  if (episodes.empty()) throw Error(ErrorCode::EmptyDataset, "no episodes");
  const std::string task = episodes.front().header.task;
  for (const auto& e : episodes) {
    if (e.header.schema_version != kEpisodeSchemaVersion)
      throw Error(ErrorCode::SchemaMismatch, "episode schema version differs");
    if (e.header.task != task) throw Error(ErrorCode::SchemaMismatch, "episodes mix tasks");
  }
  BCDataset d;
  d.include_force = include_force;
  d.window = window;
  std::size_t n = 0;
  for (const auto& e : episodes)
    if (e.frames.size() >= window) n += e.frames.size() - window + 1;
  if (n == 0) throw Error(ErrorCode::EmptyDataset, "no episode holds a full window");
  const auto in_dim = static_cast<Eigen::Index>(window * kBcFrameDim);
  d.X.resize(in_dim, static_cast<Eigen::Index>(n));
  d.T.resize(static_cast<Eigen::Index>(d.outputs()), static_cast<Eigen::Index>(n));
  d.is_validation.resize(episodes.size());
  Eigen::Index col = 0;
  for (std::size_t ei = 0; ei < episodes.size(); ++ei) {
    d.is_validation[ei] = validation_every > 0 && (ei % validation_every) == validation_every - 1;
    const auto& frames = episodes[ei].frames;
    if (frames.size() < window) continue;
    std::vector<std::array<float, kBcFrameDim>> feats;
    feats.reserve(frames.size());
    for (const auto& f : frames) feats.push_back(bc_frame_features(f.state, f.scene, f.estimate.F_hat_ee, include_force));
    for (std::size_t end = window - 1; end < frames.size(); ++end, ++col) {
      Eigen::Index k = 0;
      for (std::size_t j = end + 1 - window; j <= end; ++j)
        for (float v : feats[j]) d.X(k++, col) = v;
      const auto& c = frames[end].label ? *frames[end].label : frames[end].cmd;
      for (int i = 0; i < 3; ++i) d.T(i, col) = static_cast<float>(c.x_ee_cmd[i]);
      if (include_force)
        for (int i = 0; i < 3; ++i) d.T(3 + i, col) = static_cast<float>(c.F_ee_cmd[i]);
      d.episode_of.push_back(ei);
    }
  }
  // normalisation from the train split only
  d.input_lo.assign(static_cast<std::size_t>(in_dim), 0.0f);
  d.input_hi.assign(static_cast<std::size_t>(in_dim), 0.0f);
  bool any = false;
  for (Eigen::Index c = 0; c < d.X.cols(); ++c) {
    if (d.is_validation[d.episode_of[static_cast<std::size_t>(c)]]) continue;
    for (Eigen::Index r = 0; r < in_dim; ++r) {
      const float v = d.X(r, c);
      if (!any) {
        d.input_lo[r] = d.input_hi[r] = v;
      } else {
        d.input_lo[r] = std::min(d.input_lo[r], v);
        d.input_hi[r] = std::max(d.input_hi[r], v);
      }
    }
    any = true;
  }
  if (!any) throw Error(ErrorCode::EmptyDataset, "train split is empty");
  for (Eigen::Index r = 0; r < in_dim; ++r)
    if (d.input_hi[r] - d.input_lo[r] < 1e-6f) {
      d.input_lo[r] -= 1.0f;
      d.input_hi[r] += 1.0f;
    }
  d.output_scale = bc_output_scale(include_force);
  return d;
}

/// Episode paths with their split, as stored next to a trained policy.
inline nlohmann::json dataset_manifest(const std::vector<std::string>& episode_paths, const BCDataset& d) {
  if (episode_paths.size() != d.is_validation.size())
    throw Error(ErrorCode::InvalidArgument, "one path per dataset episode expected");
  nlohmann::json eps = nlohmann::json::array();
  for (std::size_t i = 0; i < episode_paths.size(); ++i)
    eps.push_back({{"path", episode_paths[i]}, {"split", d.is_validation[i] ? "validation" : "train"}});
  return {{"include_force", d.include_force}, {"window", d.window}, {"samples", d.samples()},
          {"hash", d.hash()},                 {"episodes", eps}};
}

// ---------------------------------------------------------------------------
// Policy

struct BCPolicy {
  RegressorModel model;
  bool include_force = true;
  std::size_t window = kBcWindow;
  CommandRanges ranges{};

  /// Command for the newest window (oldest frame first), clamped to the ranges.
  CommandBundle act(const std::vector<std::array<float, kBcFrameDim>>& frames) const {
    if (frames.size() != window) throw Error(ErrorCode::InsufficientHistory, "policy needs a full feature window");
    Mlp<float>::Mat x(static_cast<Eigen::Index>(window * kBcFrameDim), 1);
    Eigen::Index k = 0;
    for (const auto& f : frames)
      for (float v : f) x(k++, 0) = v;
    const Mlp<float>::Mat y = model.predict_raw(x);
    CommandBundle c;
    c.x_ee_cmd = clamp_to_command_ranges(Vec3(y(0, 0), y(1, 0), y(2, 0)), ranges);
    if (include_force)
      c.F_ee_cmd = Vec3(ranges.F_ee.clamp(y(3, 0)), ranges.F_ee.clamp(y(4, 0)), ranges.F_ee.clamp(y(5, 0)));
    return c;
  }
};

inline Mlp<float>::Mat select_columns(const Mlp<float>::Mat& M, const std::vector<std::size_t>& idx) {
  Mlp<float>::Mat out(M.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = M.col(static_cast<Eigen::Index>(idx[i]));
  return out;
}

struct BCTrainResult {
  BCPolicy policy;
  std::vector<double> loss_history;
  double validation_rms = 0.0;        // normalised command RMS (fraction of range)
  std::array<double, 2> channel_rms{};  // raw RMS: position (m), force (N)
};

inline double validation_rms(const BCPolicy& p, const BCDataset& d, std::array<double, 2>* channel = nullptr) {
  auto idx = d.split_indices(true);
  if (idx.empty()) idx = d.split_indices(false);
  const auto X = select_columns(d.X, idx);
  const auto T = select_columns(d.T, idx);
  const Mlp<float>::Mat Y = p.model.predict_raw(X);
  double sum = 0.0, pos = 0.0, force = 0.0;
  for (Eigen::Index r = 0; r < T.rows(); ++r) {
    const double scale = 2.0 * d.output_scale[static_cast<std::size_t>(r)];  // full command range
    const double se = (Y.row(r) - T.row(r)).cast<double>().squaredNorm();
    sum += se / (scale * scale);
    (r < 3 ? pos : force) += se;
  }
  const double n = static_cast<double>(T.cols());
  if (channel) *channel = {std::sqrt(pos / (3.0 * n)), T.rows() > 3 ? std::sqrt(force / (3.0 * n)) : 0.0};
  return std::sqrt(sum / (static_cast<double>(T.rows()) * n));
}

/// MLP with a linear skip path; the skip path is fitted by ridge least
/// squares on the train split before SGD trains the MLP on the residual.
inline BCTrainResult train_bc(const BCDataset& d, const TrainOptions& opts, std::vector<int> hidden = {128, 128},
                              Activation act = Activation::Relu, bool linear_skip = true) {
  const auto train_idx = d.split_indices(false);
  if (train_idx.empty()) throw Error(ErrorCode::EmptyDataset, "train split is empty");
  BCTrainResult out;
  out.policy.include_force = d.include_force;
  out.policy.window = d.window;
  out.policy.model =
      RegressorModel(std::move(hidden), act, d.input_lo, d.input_hi, d.output_scale, opts.seed, linear_skip);
  out.policy.model.metadata = {{"kind", "bc"}, {"include_force", d.include_force}, {"window", d.window}};
  auto draw = [&](Rng& rng, int batch, Mlp<float>::Mat& X, Mlp<float>::Mat& T) {
    X.resize(d.X.rows(), batch);
    T.resize(d.T.rows(), batch);
    for (int b = 0; b < batch; ++b) {
      const auto c = static_cast<Eigen::Index>(train_idx[rng.index(train_idx.size())]);
      X.col(b) = d.X.col(c);
      T.col(b) = d.T.col(c);
    }
  };
  if (linear_skip) {
    const auto X = select_columns(d.X, train_idx);
    const auto T = select_columns(d.T, train_idx);
    std::size_t next = 0;
    auto sequential = [&](Rng&, int batch, Mlp<float>::Mat& Xb, Mlp<float>::Mat& Tb) {
      Xb = X.middleCols(static_cast<Eigen::Index>(next), batch);
      Tb = T.middleCols(static_cast<Eigen::Index>(next), batch);
      next += static_cast<std::size_t>(batch);
    };
    fit_linear_part(out.policy.model, sequential, static_cast<int>(train_idx.size()), 1e-6, opts.seed);
  }
  const auto monitor = train_regressor(out.policy.model, draw, opts);
  out.loss_history = monitor.history();
  out.validation_rms = validation_rms(out.policy, d, &out.channel_rms);
  return out;
}

inline BCPolicy policy_from_model(RegressorModel model) {
  BCPolicy p;
  p.include_force = model.metadata.value("include_force", true);
  p.window = model.metadata.value("window", kBcWindow);
  if (model.outputs() != (p.include_force ? 6 : 3))
    throw Error(ErrorCode::SchemaMismatch, "policy output size does not match its force flag");
  p.model = std::move(model);
  return p;
}

// ---------------------------------------------------------------------------
// Demonstrations and rollouts

inline constexpr int kMaxRolloutSteps = 1000;
inline constexpr int kExpertTailTicks = 10;

/// AR(1) perturbation of the executed expert command. The clean command is
/// kept as the frame label so the demonstrations include recoveries.
struct ExecutionNoise {
  double position_sigma = 0.005;  // m
  double force_sigma = 2.0;       // N
  double correlation = 0.9;       // per tick

  bool active() const { return position_sigma > 0.0 || force_sigma > 0.0; }
};

inline constexpr std::uint64_t kSaltExecutionNoise = 21;

/// One scripted-expert demonstration. Returns the record and whether the
/// expert succeeded.
inline EpisodeRecord record_expert_episode(const TaskSpec& spec, std::uint64_t seed, bool* success = nullptr,
                                           const ExecutionNoise& noise = {}, int max_steps = kMaxRolloutSteps,
                                           const PlantParams& nominal = {}, const ControllerConfig& controller = {}) {
  const TaskInstance inst = make_instance(spec, seed);
  Session session(inst.scene, seed, nominal, controller);
  TaskTracker tracker(spec, inst);
  tracker.start(session.state(), session.environment());
  EpisodeRecorder recorder(session, to_string(spec.kind), controller);
  Rng rng(derive_seed(seed, kSaltExecutionNoise));
  const double rho = noise.correlation;
  const double innovation = std::sqrt(std::max(0.0, 1.0 - rho * rho));
  Vec3 nx = Vec3::Zero(), nf = Vec3::Zero();
  int tail = -1;
  for (int k = 0; k < max_steps; ++k) {
    const CommandBundle cmd = expert_command(tracker, session.state(), session.environment());
    CommandBundle executed = cmd;
    if (noise.active()) {
      for (int i = 0; i < 3; ++i) {
        nx[i] = rho * nx[i] + innovation * noise.position_sigma * rng.normal();
        nf[i] = rho * nf[i] + innovation * noise.force_sigma * rng.normal();
      }
      executed.x_ee_cmd += nx;
      executed.F_ee_cmd += nf;
    }
    Session::Tick tick;
    EpisodeFrame frame = advance_recorded(session, ControlMode::force(), executed, tracker.features(), &tick);
    if (noise.active()) frame.label = cmd;
    recorder.add(std::move(frame));
    tracker.update(tick.state, session.environment());
    if (tail < 0 && tracker.finished()) tail = kExpertTailTicks;
    if (tail >= 0 && tail-- == 0) break;
  }
  if (success) *success = tracker.success();
  return recorder.record();
}

struct RolloutResult {
  bool success = false;
  int steps = 0;
  double coverage = 0.0;
  double band_occupancy = 0.0;
  double peak_force = 0.0;
  bool pressed = false;
  bool released = false;
};

using PolicyFn = std::function<CommandBundle(const TaskTracker&, const Session&,
                                             const std::vector<std::array<float, kBcFrameDim>>&)>;

/// Closed-loop episode: the policy output feeds the unified controller in
/// force-control mode every tick.
inline RolloutResult rollout(const PolicyFn& policy, const TaskSpec& spec, std::uint64_t seed, bool include_force,
                             int max_steps = kMaxRolloutSteps, const PlantParams& nominal = {},
                             const ControllerConfig& controller = {}) {
  const TaskInstance inst = make_instance(spec, seed);
  Session session(inst.scene, seed, nominal, controller);
  TaskTracker tracker(spec, inst);
  tracker.start(session.state(), session.environment());
  std::vector<std::array<float, kBcFrameDim>> window;
  RolloutResult r;
  for (int k = 0; k < max_steps; ++k) {
    const EstimatorOutput est = session.estimator().estimate(session.history());
    const auto feats = bc_frame_features(session.state(), tracker.features(), est.F_hat_ee, include_force);
    if (window.empty()) window.assign(kBcWindow, feats);
    window.erase(window.begin());
    window.push_back(feats);
    const CommandBundle cmd = policy(tracker, session, window);
    const auto tick = session.advance(ControlMode::force(), cmd);
    tracker.update(tick.state, session.environment());
    r.steps = k + 1;
    if (tracker.finished()) break;
  }
  r.success = tracker.success();
  r.coverage = tracker.coverage();
  r.band_occupancy = tracker.band_occupancy();
  r.peak_force = tracker.peak_force();
  r.pressed = tracker.pressed();
  r.released = tracker.released();
  return r;
}

inline PolicyFn expert_policy() {
  return [](const TaskTracker& t, const Session& s, const std::vector<std::array<float, kBcFrameDim>>&) {
    return expert_command(t, s.state(), s.environment());
  };
}

inline PolicyFn bc_policy(const BCPolicy& p) {
  return [&p](const TaskTracker&, const Session&, const std::vector<std::array<float, kBcFrameDim>>& w) {
    return p.act(w);
  };
}

inline PolicyFn zero_policy() {
  return [](const TaskTracker&, const Session&, const std::vector<std::array<float, kBcFrameDim>>&) {
    return CommandBundle{};
  };
}

// ---------------------------------------------------------------------------
// Ablation

/// Success rates from the real-robot ablation (50 trials per task), shipped
/// for side-by-side reading of the report.
struct ReferenceSuccess {
  const char* task;
  double with_force;
  double without_force;
};

inline constexpr std::array<ReferenceSuccess, 4> kReferenceAblation{{
    {"wipe-blackboard", 0.58, 0.22},
    {"open-cabinet", 0.70, 0.36},
    {"close-cabinet", 0.72, 0.30},
    {"open-cabinet-occluded", 0.76, 0.30},
}};

struct AblationRow {
  std::string task;
  int trials = 0;
  int success_with = 0;
  int success_without = 0;
  std::vector<std::uint64_t> seeds;

  double rate_with() const { return trials ? static_cast<double>(success_with) / trials : 0.0; }
  double rate_without() const { return trials ? static_cast<double>(success_without) / trials : 0.0; }
  double delta() const { return rate_with() - rate_without(); }
};

inline AblationRow compare_policies(const TaskSpec& spec, const BCPolicy& with_force, const BCPolicy& without_force,
                                    int trials, std::uint64_t first_seed) {
  AblationRow row;
  row.task = to_string(spec.kind);
  row.trials = trials;
  const PolicyFn a = bc_policy(with_force), b = bc_policy(without_force);
  for (int i = 0; i < trials; ++i) {
    const std::uint64_t seed = first_seed + static_cast<std::uint64_t>(i);
    row.seeds.push_back(seed);
    if (rollout(a, spec, seed, with_force.include_force).success) ++row.success_with;
    if (rollout(b, spec, seed, without_force.include_force).success) ++row.success_without;
  }
  return row;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::setprecision(6);
  os << "task,trials,success_with_force,success_without_force,delta,first_seed,last_seed\n";
  for (const auto& r : rows)
    os << r.task << ',' << r.trials << ',' << r.rate_with() << ',' << r.rate_without() << ',' << r.delta() << ','
       << (r.seeds.empty() ? 0 : r.seeds.front()) << ',' << (r.seeds.empty() ? 0 : r.seeds.back()) << '\n';
  return os.str();
}

inline std::string ablation_summary(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "task              with   without  delta\n";
  for (const auto& r : rows)
    os << std::left << std::setw(17) << r.task << ' ' << r.rate_with() << "   " << r.rate_without() << "     "
       << std::showpos << r.delta() << std::noshowpos << '\n';
  os << "\nreference (real robot, 50 trials):\n";
  for (const auto& ref : kReferenceAblation)
    os << "  " << std::left << std::setw(24) << ref.task << ref.with_force << " vs " << ref.without_force << '\n';
  return os.str();
}

inline constexpr std::uint64_t kSaltDemonstrations = 50;
inline constexpr std::uint64_t kSaltBcTraining = 51;
inline constexpr std::uint64_t kSaltAblationRollouts = 52;

struct AblationOptions {
  std::vector<TaskKind> tasks{TaskKind::WipeWall, TaskKind::PushLatch, TaskKind::PushLatchOccluded};
  int wipe_episodes = 50;
  int latch_episodes = 30;  // per latch task
  int trials = 50;          // rollouts per task and policy
  int steps = 30000;
  int batch = 64;
  double lr = 1e-3;
};

struct AblationTaskResult {
  AblationRow row;
  int episodes = 0;
  int expert_successes = 0;
  BCTrainResult with_force;
  BCTrainResult without_force;
};

struct AblationResult {
  std::vector<AblationTaskResult> tasks;
  double seconds = 0.0;

  std::vector<AblationRow> rows() const {
    std::vector<AblationRow> out;
    for (const auto& t : tasks) out.push_back(t.row);
    return out;
  }
};

/// Scripted demonstrations per task, BC with and without the force channel
/// on the same episodes, then paired rollouts on shared seeds.
inline AblationResult run_ablation(std::uint64_t seed, const AblationOptions& o = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  AblationResult result;
  for (TaskKind kind : o.tasks) {
    const TaskSpec spec = default_task(kind);
    const auto salt = static_cast<std::uint64_t>(kind);
    AblationTaskResult t;
    t.episodes = kind == TaskKind::WipeWall ? o.wipe_episodes : o.latch_episodes;
    std::vector<EpisodeRecord> episodes;
    const std::uint64_t first = derive_seed(derive_seed(seed, kSaltDemonstrations), salt);
    for (int i = 0; i < t.episodes; ++i) {
      bool ok = false;
      episodes.push_back(record_expert_episode(spec, first + static_cast<std::uint64_t>(i), &ok));
      t.expert_successes += ok ? 1 : 0;
    }
    TrainOptions train;
    train.steps = o.steps;
    train.batch = o.batch;
    train.lr = o.lr;
    train.seed = derive_seed(derive_seed(seed, kSaltBcTraining), salt);
    t.with_force = train_bc(build_dataset(episodes, true), train);
    t.without_force = train_bc(build_dataset(episodes, false), train);
    t.row = compare_policies(spec, t.with_force.policy, t.without_force.policy, o.trials,
                             derive_seed(derive_seed(seed, kSaltAblationRollouts), salt));
    result.tasks.push_back(std::move(t));
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace uniforce
