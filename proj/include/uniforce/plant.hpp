#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <variant>

#include "uniforce/core.hpp"

namespace uniforce {

/// Spherical-shell workspace of the end-effector in the body frame.
/// theta is elevation, phi is azimuth.
struct Workspace {
  double r_min = 0.35;
  double r_max = 0.85;
  double theta_min = -0.4 * M_PI;
  double theta_max = 0.4 * M_PI;
  double phi_min = -0.6 * M_PI;
  double phi_max = 0.6 * M_PI;
};

struct PlantParams {
  double mass_ee = 2.0;           // kg
  double pd_kp = 600.0;           // N/m
  double pd_kd = 60.0;            // N s/m
  double force_limit = 120.0;     // N, per axis
  double base_damping = 75.0;     // N s/m
  double base_mass = 15.0;        // kg
  double base_lean_stiffness = 600.0;  // N/rad; planar push -> body lean
  Workspace workspace{};
  double dt = 0.02;               // s
  double friction = 1.0;          // scales contact damping
  double payload = 0.0;           // kg carried by the gripper
  double motor_strength_scale = 1.0;
  Vec3 com_offset = Vec3::Zero(); // m, recorded only
  double push_velocity = 0.0;     // m/s impulse magnitude, 0 disables pushes
  double push_interval = 8.0;     // s
  double action_scale = 2.0;      // m per unit action
  Vec3 q_default = Vec3::Zero();  // m

  /// Throws UnstableGains / InvalidArgument when the parameters cannot be simulated.
  void validate() const {
    if (!(dt > 0.0 && dt <= 0.05)) throw Error(ErrorCode::InvalidArgument, "dt must lie in (0, 0.05]");
    if (!(mass_ee > 0.0)) throw Error(ErrorCode::InvalidArgument, "mass_ee must be > 0");
    if (!(pd_kp > 0.0)) throw Error(ErrorCode::InvalidArgument, "pd_kp must be > 0");
    if (!(pd_kd >= 0.0)) throw Error(ErrorCode::InvalidArgument, "pd_kd must be >= 0");
    if (!(base_damping > 0.0)) throw Error(ErrorCode::InvalidArgument, "base_damping must be > 0");
    if (!(base_mass > 0.0)) throw Error(ErrorCode::InvalidArgument, "base_mass must be > 0");
    if (!(force_limit > 0.0)) throw Error(ErrorCode::InvalidArgument, "force_limit must be > 0");
    if (!(action_scale > 0.0)) throw Error(ErrorCode::InvalidArgument, "action_scale must be > 0");
    if (!(pd_kp * dt * dt / mass_ee < 4.0))
      throw Error(ErrorCode::UnstableGains, "pd_kp*dt^2/mass_ee must be < 4");
  }

  double base_time_constant() const { return base_mass / base_damping; }
};

struct BasePose {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
};

/// Simulated end-effector point and base. Force fields describe the step
/// that produced this state.
struct PlantState {
  Vec3 x_ee = Vec3::Zero();
  Vec3 v_ee = Vec3::Zero();
  Vec3 a_ee = Vec3::Zero();
  BaseVelocity v_base{};
  BasePose base_pose{};
  Vec3 actuator_force = Vec3::Zero();
  Vec3 contact_force = Vec3::Zero();
  Vec3 external_force = Vec3::Zero();   // applied EE disturbance
  Vec3 net_force_ee = Vec3::Zero();     // contact + disturbance + payload reaction
  Vec3 base_force = Vec3::Zero();       // planar external force on the base
  Vec3 action = Vec3::Zero();           // normalized action that produced this state
  double t = 0.0;
  std::uint64_t tick = 0;
};

// ---------------------------------------------------------------------------
// Environments

struct FreeSpace {};

/// Half-space obstacle. `normal` points out of the wall into free space.
struct Wall {
  Vec3 point = Vec3(0.6, 0.0, 0.0);
  Vec3 normal = Vec3(-1.0, 0.0, 0.0);
  double stiffness = 5000.0;
  double damping = 50.0;
};

enum class LatchState { Closed, Pressed, Sprung };

inline const char* to_string(LatchState s) {
  switch (s) {
    case LatchState::Closed: return "closed";
    case LatchState::Pressed: return "pressed";
    case LatchState::Sprung: return "sprung";
  }
  return "closed";
}

/// Push-to-open panel. While closed the panel rides on a spring of stiffness
/// trigger_force/travel; reaching full travel latches it (Pressed). Backing
/// off below release_force afterwards pops it open (Sprung) by `rebound`.
struct SpringLatch {
  Vec3 point = Vec3(0.6, 0.0, 0.0);
  Vec3 normal = Vec3(-1.0, 0.0, 0.0);
  double travel = 0.02;
  double trigger_force = 15.0;
  double rebound = 0.05;
  double stop_stiffness = 5000.0;
  double damping = 50.0;
  double release_force = 1.0;
  LatchState state = LatchState::Closed;
};

/// Mass rigidly hanging from the gripper.
struct Payload {
  double mass = 2.5;
};

using EnvironmentModel = std::variant<FreeSpace, Wall, SpringLatch, Payload>;

inline void validate(const EnvironmentModel& env) {
  if (const auto* w = std::get_if<Wall>(&env)) {
    if (!(w->stiffness > 0.0)) throw Error(ErrorCode::InvalidArgument, "wall stiffness must be > 0");
    if (std::abs(w->normal.norm() - 1.0) > 1e-9) throw Error(ErrorCode::InvalidArgument, "wall normal must be unit");
  } else if (const auto* l = std::get_if<SpringLatch>(&env)) {
    if (!(l->trigger_force > 0.0)) throw Error(ErrorCode::InvalidArgument, "latch trigger force must be > 0");
    if (!(l->travel > 0.0)) throw Error(ErrorCode::InvalidArgument, "latch travel must be > 0");
    if (std::abs(l->normal.norm() - 1.0) > 1e-9) throw Error(ErrorCode::InvalidArgument, "latch normal must be unit");
  } else if (const auto* p = std::get_if<Payload>(&env)) {
    if (!(p->mass >= 0.0)) throw Error(ErrorCode::InvalidArgument, "payload mass must be >= 0");
  }
}

inline double penetration(const Vec3& point, const Vec3& normal, const Vec3& x) {
  return std::max(0.0, (point - x).dot(normal));
}

/// Environment reaction on the end-effector. Never adhesive.
inline Vec3 contact_force(const EnvironmentModel& env, const Vec3& x_ee, const Vec3& v_ee) {
  if (const auto* w = std::get_if<Wall>(&env)) {
    const double pen = penetration(w->point, w->normal, x_ee);
    if (pen <= 0.0) return Vec3::Zero();
    const double push = w->stiffness * pen - w->damping * v_ee.dot(w->normal);
    return std::max(0.0, push) * w->normal;
  }
  if (const auto* l = std::get_if<SpringLatch>(&env)) {
    if (l->state == LatchState::Sprung) return Vec3::Zero();
    const double pen = penetration(l->point, l->normal, x_ee);
    if (pen <= 0.0) return Vec3::Zero();
    const double spring = l->trigger_force / l->travel;
    const double elastic = pen <= l->travel ? spring * pen
                                            : l->trigger_force + l->stop_stiffness * (pen - l->travel);
    const double push = elastic - l->damping * v_ee.dot(l->normal);
    return std::max(0.0, push) * l->normal;
  }
  return Vec3::Zero();
}

/// Advances internal environment state (the latch state machine) after a
/// step that ended at x_ee with the given contact force. At most one
/// transition per call.
inline EnvironmentModel advance_environment(EnvironmentModel env, const Vec3& x_ee, const Vec3& contact) {
  if (auto* l = std::get_if<SpringLatch>(&env)) {
    const double pen = penetration(l->point, l->normal, x_ee);
    if (l->state == LatchState::Closed && pen >= l->travel) {
      l->state = LatchState::Pressed;
    } else if (l->state == LatchState::Pressed && contact.norm() <= l->release_force) {
      l->state = LatchState::Sprung;
    }
  }
  return env;
}

/// Panel displacement along the inward normal: positive while pressed in,
/// -rebound once sprung, 0 for non-latch environments.
inline double panel_displacement(const EnvironmentModel& env, const Vec3& x_ee) {
  if (const auto* l = std::get_if<SpringLatch>(&env)) {
    if (l->state == LatchState::Sprung) return -l->rebound;
    return std::min(penetration(l->point, l->normal, x_ee), l->travel);
  }
  return 0.0;
}

inline double payload_mass(const EnvironmentModel& env, const PlantParams& params) {
  double m = params.payload;
  if (const auto* p = std::get_if<Payload>(&env)) m += p->mass;
  return m;
}

/// Applies plant-level scaling (friction scales contact damping).
inline EnvironmentModel effective_environment(EnvironmentModel env, const PlantParams& params) {
  if (auto* w = std::get_if<Wall>(&env)) w->damping *= params.friction;
  if (auto* l = std::get_if<SpringLatch>(&env)) l->damping *= params.friction;
  return env;
}

// ---------------------------------------------------------------------------
// Actuation

inline Vec3 pd_actuator(const Vec3& x_target, const PlantState& state, const PlantParams& params) {
  const Vec3 raw = params.pd_kp * (x_target - state.x_ee) - params.pd_kd * state.v_ee;
  const Vec3 sat = raw.cwiseMax(-params.force_limit).cwiseMin(params.force_limit);
  return params.motor_strength_scale * sat;
}

/// q_target = sigma_a * a + q_default.
inline Vec3 action_to_target(const Vec3& a, double sigma_a, const Vec3& q_default) {
  if (!a.allFinite() || a.cwiseAbs().maxCoeff() > 1.0)
    throw Error(ErrorCode::ActionOutOfRange, "action components must lie in [-1, 1]");
  return sigma_a * a + q_default;
}

/// Inverse of action_to_target, saturated into the valid action box.
inline Vec3 target_to_action(const Vec3& target, double sigma_a, const Vec3& q_default) {
  return ((target - q_default) / sigma_a).cwiseMax(-1.0).cwiseMin(1.0);
}

struct PlantTarget {
  Vec3 action = Vec3::Zero();  // normalized EE action
  BaseVelocity v_base{};
};

struct Disturbance {
  Vec3 ee = Vec3::Zero();
  Vec3 base = Vec3::Zero();
};

/// Unit direction of the k-th push event (golden-angle sweep, deterministic).
inline Vec3 push_direction(std::uint64_t event_index) {
  const double angle = 2.399963229728653 * static_cast<double>(event_index);
  return Vec3(std::cos(angle), std::sin(angle), 0.0);
}

/// One semi-implicit Euler step. Pure: identical inputs give identical outputs.
inline PlantState step(const PlantState& state, const PlantTarget& target, const EnvironmentModel& env,
                       const Disturbance& disturbance, const PlantParams& params) {
  const double dt = params.dt;
  const Vec3 x_target = action_to_target(target.action, params.action_scale, params.q_default);

  PlantState next = state;
  const Vec3 f_act = pd_actuator(x_target, state, params);
  const Vec3 f_contact = contact_force(effective_environment(env, params), state.x_ee, state.v_ee);
  const double m_p = payload_mass(env, params);
  const Vec3 gravity(0.0, 0.0, -kGravity);

  const Vec3 accel = (f_act + f_contact + disturbance.ee + m_p * gravity) / (params.mass_ee + m_p);
  const Vec3 f_payload = m_p * (gravity - accel);

  next.a_ee = accel;
  next.v_ee = state.v_ee + dt * accel;
  next.x_ee = state.x_ee + dt * next.v_ee;
  next.actuator_force = f_act;
  next.contact_force = f_contact;
  next.external_force = disturbance.ee;
  next.net_force_ee = f_contact + disturbance.ee + f_payload;
  next.base_force = Vec3(disturbance.base.x(), disturbance.base.y(), 0.0);
  next.action = target.action;

  const double alpha = dt / params.base_time_constant();
  next.v_base.vx = state.v_base.vx + alpha * (target.v_base.vx - state.v_base.vx);
  next.v_base.vy = state.v_base.vy + alpha * (target.v_base.vy - state.v_base.vy);
  next.v_base.wz = state.v_base.wz + alpha * (target.v_base.wz - state.v_base.wz);

  next.tick = state.tick + 1;
  next.t = static_cast<double>(next.tick) * dt;

  if (params.push_velocity > 0.0 && params.push_interval > 0.0) {
    const auto period = static_cast<std::uint64_t>(std::llround(params.push_interval / dt));
    if (period > 0 && next.tick % period == 0) {
      const Vec3 dir = push_direction(next.tick / period - 1);
      next.v_base.vx += params.push_velocity * dir.x();
      next.v_base.vy += params.push_velocity * dir.y();
    }
  }

  BasePose& pose = next.base_pose;
  pose.yaw = state.base_pose.yaw + dt * next.v_base.wz;
  const double c = std::cos(pose.yaw), s = std::sin(pose.yaw);
  pose.x = state.base_pose.x + dt * (c * next.v_base.vx - s * next.v_base.vy);
  pose.y = state.base_pose.y + dt * (s * next.v_base.vx + c * next.v_base.vy);

  const bool finite = next.x_ee.allFinite() && next.v_ee.allFinite() && next.a_ee.allFinite() &&
                      std::isfinite(next.v_base.vx) && std::isfinite(next.v_base.vy) &&
                      std::isfinite(next.v_base.wz) && std::isfinite(pose.x) && std::isfinite(pose.y) &&
                      std::isfinite(pose.yaw);
  if (!finite) throw Error(ErrorCode::NonFiniteState, "plant state left the finite range");
  return next;
}

/// Owns the evolving plant + environment pair.
class Simulation {
 public:
  Simulation() = default;
  Simulation(PlantParams params, EnvironmentModel env, PlantState initial = {})
      : params_(params), env_(std::move(env)), state_(initial) {
    params_.validate();
    validate(env_);
  }

  const PlantState& advance(const PlantTarget& target, const Disturbance& disturbance = {}) {
    state_ = step(state_, target, env_, disturbance, params_);
    env_ = advance_environment(env_, state_.x_ee, state_.contact_force);
    return state_;
  }

  const PlantState& state() const { return state_; }
  const EnvironmentModel& environment() const { return env_; }
  const PlantParams& params() const { return params_; }

 private:
  PlantParams params_{};
  EnvironmentModel env_{FreeSpace{}};
  PlantState state_{};
};

}  // namespace uniforce
