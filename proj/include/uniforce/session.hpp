#pragma once

#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "uniforce/core.hpp"
#include "uniforce/estimator.hpp"
#include "uniforce/plant.hpp"
#include "uniforce/rewards.hpp"
#include "uniforce/scheduler.hpp"
#include "uniforce/unified_control.hpp"

namespace uniforce {

/// Seeded ramp-hold-release disturbances on the EE and/or the base.
struct DisturbanceSpec {
  bool ee = false;
  bool base = false;
  Range ee_range{-60.0, 60.0};
  Range base_range{-60.0, 60.0};
  CycleSchedule schedule{};
};

/// Everything needed (together with a seed) to rebuild a session exactly.
struct SceneSpec {
  EnvironmentModel env{FreeSpace{}};
  bool randomize = false;
  DisturbanceSpec disturbance{};
  Vec3 x_home = Vec3(0.5, 0.0, 0.0);
  std::string label;
};

// ---------------------------------------------------------------------------
// JSON forms

inline nlohmann::json environment_to_json(const EnvironmentModel& env) {
  if (std::holds_alternative<FreeSpace>(env)) return {{"kind", "free"}};
  if (const auto* w = std::get_if<Wall>(&env))
    return {{"kind", "wall"},
            {"point", vec_to_json(w->point)},
            {"normal", vec_to_json(w->normal)},
            {"stiffness", w->stiffness},
            {"damping", w->damping}};
  if (const auto* l = std::get_if<SpringLatch>(&env))
    return {{"kind", "latch"},
            {"point", vec_to_json(l->point)},
            {"normal", vec_to_json(l->normal)},
            {"travel", l->travel},
            {"trigger_force", l->trigger_force},
            {"rebound", l->rebound},
            {"stop_stiffness", l->stop_stiffness},
            {"damping", l->damping},
            {"release_force", l->release_force},
            {"state", to_string(l->state)}};
  const auto& p = std::get<Payload>(env);
  return {{"kind", "payload"}, {"mass", p.mass}};
}

inline LatchState latch_state_from_string(const std::string& s) {
  if (s == "closed") return LatchState::Closed;
  if (s == "pressed") return LatchState::Pressed;
  if (s == "sprung") return LatchState::Sprung;
  throw Error(ErrorCode::SchemaMismatch, "unknown latch state '" + s + "'");
}

inline EnvironmentModel environment_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "free") return FreeSpace{};
  if (kind == "wall") {
    Wall w;
    w.point = vec_from_json(j.at("point"));
    w.normal = vec_from_json(j.at("normal"));
    w.stiffness = j.value("stiffness", w.stiffness);
    w.damping = j.value("damping", w.damping);
    return w;
  }
  if (kind == "latch") {
    SpringLatch l;
    l.point = vec_from_json(j.at("point"));
    l.normal = vec_from_json(j.at("normal"));
    l.travel = j.value("travel", l.travel);
    l.trigger_force = j.value("trigger_force", l.trigger_force);
    l.rebound = j.value("rebound", l.rebound);
    l.stop_stiffness = j.value("stop_stiffness", l.stop_stiffness);
    l.damping = j.value("damping", l.damping);
    l.release_force = j.value("release_force", l.release_force);
    l.state = latch_state_from_string(j.value("state", std::string("closed")));
    return l;
  }
  if (kind == "payload") return Payload{j.value("mass", Payload{}.mass)};
  throw Error(ErrorCode::SchemaMismatch, "unknown environment kind '" + kind + "'");
}

inline nlohmann::json range_to_json(const Range& r) { return nlohmann::json::array({r.lo, r.hi}); }

inline Range range_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2) throw Error(ErrorCode::SchemaMismatch, "expected [lo, hi]");
  return {j.at(0).get<double>(), j.at(1).get<double>()};
}

inline nlohmann::json scene_to_json(const SceneSpec& s) {
  const auto& d = s.disturbance;
  return {{"env", environment_to_json(s.env)},
          {"randomize", s.randomize},
          {"disturbance",
           {{"ee", d.ee},
            {"base", d.base},
            {"ee_range", range_to_json(d.ee_range)},
            {"base_range", range_to_json(d.base_range)},
            {"schedule", {d.schedule.ramp_up, d.schedule.hold, d.schedule.ramp_down, d.schedule.zero}}}},
          {"x_home", vec_to_json(s.x_home)},
          {"label", s.label}};
}

inline SceneSpec scene_from_json(const nlohmann::json& j) {
  SceneSpec s;
  s.env = environment_from_json(j.at("env"));
  s.randomize = j.value("randomize", false);
  if (j.contains("disturbance")) {
    const auto& d = j.at("disturbance");
    s.disturbance.ee = d.value("ee", false);
    s.disturbance.base = d.value("base", false);
    if (d.contains("ee_range")) s.disturbance.ee_range = range_from_json(d.at("ee_range"));
    if (d.contains("base_range")) s.disturbance.base_range = range_from_json(d.at("base_range"));
    if (d.contains("schedule")) {
      const auto v = d.at("schedule").get<std::array<double, 4>>();
      s.disturbance.schedule = {v[0], v[1], v[2], v[3]};
    }
  }
  if (j.contains("x_home")) s.x_home = vec_from_json(j.at("x_home"));
  s.label = j.value("label", std::string());
  return s;
}

inline nlohmann::json plant_params_to_json(const PlantParams& p) {
  return {{"mass_ee", p.mass_ee},
          {"pd_kp", p.pd_kp},
          {"pd_kd", p.pd_kd},
          {"force_limit", p.force_limit},
          {"base_damping", p.base_damping},
          {"base_mass", p.base_mass},
          {"base_lean_stiffness", p.base_lean_stiffness},
          {"dt", p.dt},
          {"friction", p.friction},
          {"payload", p.payload},
          {"motor_strength_scale", p.motor_strength_scale},
          {"com_offset", vec_to_json(p.com_offset)},
          {"push_velocity", p.push_velocity},
          {"push_interval", p.push_interval},
          {"action_scale", p.action_scale},
          {"q_default", vec_to_json(p.q_default)}};
}

inline PlantParams plant_params_from_json(const nlohmann::json& j) {
  PlantParams p;
  p.mass_ee = j.at("mass_ee").get<double>();
  p.pd_kp = j.at("pd_kp").get<double>();
  p.pd_kd = j.at("pd_kd").get<double>();
  p.force_limit = j.at("force_limit").get<double>();
  p.base_damping = j.at("base_damping").get<double>();
  p.base_mass = j.at("base_mass").get<double>();
  p.base_lean_stiffness = j.at("base_lean_stiffness").get<double>();
  p.dt = j.at("dt").get<double>();
  p.friction = j.at("friction").get<double>();
  p.payload = j.at("payload").get<double>();
  p.motor_strength_scale = j.at("motor_strength_scale").get<double>();
  p.com_offset = vec_from_json(j.at("com_offset"));
  p.push_velocity = j.at("push_velocity").get<double>();
  p.push_interval = j.at("push_interval").get<double>();
  p.action_scale = j.at("action_scale").get<double>();
  p.q_default = vec_from_json(j.at("q_default"));
  return p;
}

inline nlohmann::json mode_to_json(const ControlMode& m) {
  nlohmann::json j = {{"kind", to_string(m.kind)}};
  if (m.kind == ControlMode::Kind::Hybrid) j["tangent"] = vec_to_json(m.tangent);
  return j;
}

inline ControlMode mode_from_json(const nlohmann::json& j) {
  const auto kind = mode_kind_from_string(j.at("kind").get<std::string>());
  if (kind == ControlMode::Kind::Hybrid) return ControlMode::hybrid(vec_from_json(j.at("tangent")));
  return {kind, Vec3::UnitY()};
}

inline nlohmann::json plant_state_to_json(const PlantState& s) {
  return {{"t", s.t},
          {"tick", s.tick},
          {"x_ee", vec_to_json(s.x_ee)},
          {"v_ee", vec_to_json(s.v_ee)},
          {"a_ee", vec_to_json(s.a_ee)},
          {"v_base", base_velocity_to_json(s.v_base)},
          {"base_pose", {s.base_pose.x, s.base_pose.y, s.base_pose.yaw}},
          {"actuator_force", vec_to_json(s.actuator_force)},
          {"contact_force", vec_to_json(s.contact_force)},
          {"external_force", vec_to_json(s.external_force)},
          {"net_force_ee", vec_to_json(s.net_force_ee)},
          {"base_force", vec_to_json(s.base_force)},
          {"action", vec_to_json(s.action)}};
}

inline PlantState plant_state_from_json(const nlohmann::json& j) {
  PlantState s;
  s.t = j.at("t").get<double>();
  s.tick = j.at("tick").get<std::uint64_t>();
  s.x_ee = vec_from_json(j.at("x_ee"));
  s.v_ee = vec_from_json(j.at("v_ee"));
  s.a_ee = vec_from_json(j.at("a_ee"));
  s.v_base = base_velocity_from_json(j.at("v_base"));
  const auto pose = j.at("base_pose").get<std::array<double, 3>>();
  s.base_pose = {pose[0], pose[1], pose[2]};
  s.actuator_force = vec_from_json(j.at("actuator_force"));
  s.contact_force = vec_from_json(j.at("contact_force"));
  s.external_force = vec_from_json(j.at("external_force"));
  s.net_force_ee = vec_from_json(j.at("net_force_ee"));
  s.base_force = vec_from_json(j.at("base_force"));
  s.action = vec_from_json(j.at("action"));
  return s;
}

// ---------------------------------------------------------------------------
// Session

inline constexpr std::uint64_t kSaltRandomization = 1;
inline constexpr std::uint64_t kSaltEeDisturbance = 2;
inline constexpr std::uint64_t kSaltBaseDisturbance = 3;

/// Plant + controller + estimator + history, advanced one control tick at a
/// time. A session is a pure function of (scene, seed, params, the sequence
/// of modes/commands fed to it).
class Session {
 public:
  struct Tick {
    PlantState prev;
    PlantState state;
    Observation obs;
    EstimatorOutput estimate;  // the estimate the controller acted on
    ControlOutput control;
    RewardBreakdown reward;
  };

  Session(SceneSpec scene, std::uint64_t seed, PlantParams nominal = {}, ControllerConfig controller = {},
          std::shared_ptr<const ForceEstimator> estimator = nullptr)
      : scene_(std::move(scene)), seed_(seed), nominal_(nominal) {
    Rng rand_rng(derive_seed(seed, kSaltRandomization));
    if (scene_.randomize) randomization_ = sample_randomization(rand_rng);
    params_ = apply(randomization_, nominal_);
    params_.validate();
    PlantState initial;
    initial.x_ee = scene_.x_home;
    initial.action = target_to_action(scene_.x_home, params_.action_scale, params_.q_default);
    sim_ = Simulation(params_, scene_.env, initial);
    controller_ = Controller(controller, params_);
    controller_.seed_setpoint(scene_.x_home);
    estimator_ = estimator ? std::move(estimator)
                           : std::make_shared<OracleEstimator>(params_, controller.impedance.D);
    if (scene_.disturbance.ee)
      ee_stream_.emplace(derive_seed(seed, kSaltEeDisturbance), scene_.disturbance.ee_range, scene_.disturbance.schedule);
    if (scene_.disturbance.base)
      base_stream_.emplace(derive_seed(seed, kSaltBaseDisturbance), scene_.disturbance.base_range,
                           scene_.disturbance.schedule);
    history_ = HistoryBuffer(params_.dt);
    CommandBundle hold;
    hold.x_ee_cmd = scene_.x_home;
    history_.push(make_observation(sim_.state(), hold, params_));
  }

  /// Scheduled disturbance at the current time plus any caller-supplied extra.
  Disturbance disturbance_now(const Disturbance& extra = {}) {
    Disturbance d = extra;
    const double t = sim_.state().t;
    if (ee_stream_) d.ee += ee_stream_->value(t);
    if (base_stream_) d.base += base_stream_->value(t);
    return d;
  }

  Tick advance(const ControlMode& mode, const CommandBundle& cmds, const Disturbance& extra = {}) {
    Tick out;
    out.prev = sim_.state();
    out.estimate = estimator_->estimate(history_);
    out.control = controller_.tick(mode, cmds, out.estimate.F_hat_ee, out.estimate.F_hat_base);
    out.state = sim_.advance(out.control.plant, disturbance_now(extra));
    out.obs = make_observation(out.state, cmds, params_);
    history_.push(out.obs);
    out.reward = tick_rewards(out.prev, out.state, cmds, mode, controller_.config().impedance, params_);
    return out;
  }

  const PlantState& state() const { return sim_.state(); }
  const EnvironmentModel& environment() const { return sim_.environment(); }
  const PlantParams& params() const { return params_; }
  const PlantParams& nominal_params() const { return nominal_; }
  const HistoryBuffer& history() const { return history_; }
  const SceneSpec& scene() const { return scene_; }
  const RandomizationSample& randomization() const { return randomization_; }
  std::uint64_t seed() const { return seed_; }
  const ForceEstimator& estimator() const { return *estimator_; }
  const ControllerConfig& controller_config() const { return controller_.config(); }

 private:
  SceneSpec scene_;
  std::uint64_t seed_;
  PlantParams nominal_;
  PlantParams params_;
  RandomizationSample randomization_{};
  Simulation sim_;
  Controller controller_;
  std::shared_ptr<const ForceEstimator> estimator_;
  std::optional<ForceCycleStream> ee_stream_;
  std::optional<ForceCycleStream> base_stream_;
  HistoryBuffer history_;
};

}  // namespace uniforce
