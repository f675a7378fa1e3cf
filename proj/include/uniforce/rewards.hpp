#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "uniforce/core.hpp"
#include "uniforce/plant.hpp"
#include "uniforce/unified_control.hpp"

namespace uniforce {

/// Reward weights and constants of the whole-body policy.
struct RewardConfig {
  double w_gripper_position = 2.0;
  double w_base_velocity = 2.0;
  double w_collision = -5.0;
  double w_joint_limit = -10.0;
  double w_torques = -5e-6;
  double w_joint_velocities = -8e-4;
  double w_joint_acceleration = -2e-7;
  double w_action_rate = -0.02;
  double w_torque_limit = -0.005;
  double w_contact_number = 2.0;
  double w_reference_motion = 1.0;

  double position_scale = 0.5;   // m
  double velocity_scale = 0.25;  // m/s
  double contact_threshold = 5.0;  // N
  double joint_limit_fraction = 0.8;
  double torque_limit_fraction = 0.9;

  /// Contact force above which the EE counts as colliding.
  double collision_force = 100.0;
};

struct RewardTerm {
  std::string name;
  double weight = 0.0;
  double value = 0.0;  // unweighted
};

struct RewardBreakdown {
  std::vector<RewardTerm> terms;

  double total() const {
    double s = 0.0;
    for (const auto& t : terms) s += t.weight * t.value;
    return s;
  }

  const RewardTerm* find(const std::string& name) const {
    for (const auto& t : terms)
      if (t.name == name) return &t;
    return nullptr;
  }

  void append(const RewardBreakdown& o) { terms.insert(terms.end(), o.terms.begin(), o.terms.end()); }
};

inline double gripper_position_term(const Vec3& x_ee, const Vec3& x_cmd, const Vec3& F_cmd, const Vec3& F_net,
                                    double K, const RewardConfig& cfg) {
  return std::exp(-(x_ee - compute_ee_target(x_cmd, F_cmd, F_net, K)).norm() / cfg.position_scale);
}

/// Weighted gripper-position reward; peaks when x_ee sits on the compensated target.
inline double reward_ee_unified(const Vec3& x_ee, const Vec3& x_cmd, const Vec3& F_cmd, const Vec3& F_net, double K,
                                const RewardConfig& cfg = {}) {
  return cfg.w_gripper_position * gripper_position_term(x_ee, x_cmd, F_cmd, F_net, K, cfg);
}

inline double base_velocity_term(const BaseVelocity& v, const BaseVelocity& v_cmd, const Vec3& F_base, double D,
                                 const RewardConfig& cfg) {
  if (!(D > 0.0)) throw Error(ErrorCode::InvalidArgument, "D must be > 0");
  const double ex = v.vx - (v_cmd.vx + F_base.x() / D);
  const double ey = v.vy - (v_cmd.vy + F_base.y() / D);
  return std::exp(-std::hypot(ex, ey) / cfg.velocity_scale);
}

/// Weighted base-velocity reward. F_base is the summed net + commanded base force.
inline double reward_base_unified(const BaseVelocity& v, const BaseVelocity& v_cmd, const Vec3& F_base, double D,
                                  const RewardConfig& cfg = {}) {
  return cfg.w_base_velocity * base_velocity_term(v, v_cmd, F_base, D, cfg);
}

/// Per-tick quantities the safety/smoothness terms read.
struct PenaltyInput {
  bool collision = false;
  Vec3 q = Vec3::Zero();
  Vec3 q_min = Vec3::Constant(-1.0);
  Vec3 q_max = Vec3::Constant(1.0);
  Vec3 q_dot = Vec3::Zero();
  Vec3 q_ddot = Vec3::Zero();
  Vec3 tau = Vec3::Zero();
  Vec3 tau_max = Vec3::Constant(120.0);
  Vec3 action = Vec3::Zero();
  Vec3 action_prev = Vec3::Zero();
};

inline RewardBreakdown penalties(const PenaltyInput& in, const RewardConfig& cfg = {}) {
  double joint_limit = 0.0, torque_limit = 0.0;
  for (int i = 0; i < 3; ++i) {
    if (in.q[i] > cfg.joint_limit_fraction * in.q_max[i] || in.q[i] < cfg.joint_limit_fraction * in.q_min[i])
      joint_limit += 1.0;
    if (in.tau[i] > cfg.torque_limit_fraction * std::abs(in.tau_max[i])) torque_limit += 1.0;
  }
  RewardBreakdown b;
  b.terms = {
      {"collision", cfg.w_collision, in.collision ? 1.0 : 0.0},
      {"joint_limit", cfg.w_joint_limit, joint_limit},
      {"torques", cfg.w_torques, in.tau.squaredNorm()},
      {"joint_velocities", cfg.w_joint_velocities, in.q_dot.squaredNorm()},
      {"joint_acceleration", cfg.w_joint_acceleration, in.q_ddot.squaredNorm()},
      {"action_rate", cfg.w_action_rate, (in.action_prev - in.action).norm()},
      {"torque_limit", cfg.w_torque_limit, torque_limit},
  };
  return b;
}

/// A foot is in commanded stance during the first half of its clock cycle.
inline std::array<bool, 4> stance_mask(const std::array<double, 4>& theta_feet) {
  std::array<bool, 4> m{};
  for (std::size_t i = 0; i < 4; ++i) m[i] = theta_feet[i] < 0.5;
  return m;
}

inline RewardBreakdown gait_terms(const std::array<double, 4>& foot_contact_forces, const std::array<bool, 4>& stance,
                                  const Vec3& q, const Vec3& q_ref, const RewardConfig& cfg = {}) {
  double contacts = 0.0;
  for (std::size_t i = 0; i < 4; ++i)
    if (foot_contact_forces[i] > cfg.contact_threshold && stance[i]) contacts += 1.0;
  RewardBreakdown b;
  b.terms = {
      {"contact_number", cfg.w_contact_number, contacts},
      {"reference_motion", cfg.w_reference_motion, (q - q_ref).squaredNorm()},
  };
  return b;
}

/// Breakdown of one simulated tick. The plant has no legs, so the gait
/// terms assume every commanded stance foot carries load.
inline RewardBreakdown tick_rewards(const PlantState& prev, const PlantState& s, const CommandBundle& cmds,
                                    const ControlMode& mode, const ImpedanceParams& imp, const PlantParams& plant,
                                    const Vec3& q_ref = Vec3::Zero(), const RewardConfig& cfg = {}) {
  const Vec3 f_cmd = active_force_command(mode, cmds);
  RewardBreakdown b;
  b.terms.push_back({"gripper_position", cfg.w_gripper_position,
                     gripper_position_term(s.x_ee, cmds.x_ee_cmd, f_cmd, s.net_force_ee, imp.K, cfg)});
  const Vec3 base_cmd = mode.kind == ControlMode::Kind::Position ? Vec3::Zero() : cmds.F_base_cmd;
  b.terms.push_back({"base_velocity", cfg.w_base_velocity,
                     base_velocity_term(s.v_base, cmds.v_base_cmd, s.base_force + base_cmd, imp.D, cfg)});
  PenaltyInput in;
  in.collision = s.contact_force.norm() > cfg.collision_force;
  const double r = plant.workspace.r_max;
  in.q = s.x_ee;
  in.q_min = Vec3::Constant(-r);
  in.q_max = Vec3::Constant(r);
  in.q_dot = s.v_ee;
  in.q_ddot = s.a_ee;
  in.tau = s.actuator_force;
  in.tau_max = Vec3::Constant(plant.force_limit);
  in.action = s.action;
  in.action_prev = prev.action;
  b.append(penalties(in, cfg));
  std::array<double, 4> loads;
  loads.fill(cfg.contact_threshold + 1.0);
  const auto clock = feet_clock(s.t);
  const auto mask = stance_mask(clock);
  for (std::size_t i = 0; i < 4; ++i) loads[i] = mask[i] ? loads[i] : 0.0;
  b.append(gait_terms(loads, mask, s.x_ee, q_ref, cfg));
  return b;
}

// ---------------------------------------------------------------------------
// Domain randomization

struct RandomizationRanges {
  double friction_lo = 0.3, friction_hi = 2.0;
  double body_mass_lo = 0.0, body_mass_hi = 15.0;  // kg
  double com_lo = -0.15, com_hi = 0.15;            // m per axis
  double motor_lo = 0.85, motor_hi = 1.15;         // fraction of nominal
  double payload_lo = 0.0, payload_hi = 0.5;       // kg
  double push_lo = 0.0, push_hi = 0.8;             // m/s
  double push_interval = 8.0;                      // s
};

struct RandomizationSample {
  double friction = 1.0;
  double body_mass = 0.0;
  Vec3 base_com = Vec3::Zero();
  double motor_strength = 1.0;
  double gripper_payload = 0.0;
  double push_velocity = 0.0;
  double push_interval = 8.0;
};

inline RandomizationSample sample_randomization(Rng& rng, const RandomizationRanges& r = {}) {
  RandomizationSample s;
  s.friction = rng.uniform(r.friction_lo, r.friction_hi);
  s.body_mass = rng.uniform(r.body_mass_lo, r.body_mass_hi);
  const double cx = rng.uniform(r.com_lo, r.com_hi);
  const double cy = rng.uniform(r.com_lo, r.com_hi);
  const double cz = rng.uniform(r.com_lo, r.com_hi);
  s.base_com = Vec3(cx, cy, cz);
  s.motor_strength = rng.uniform(r.motor_lo, r.motor_hi);
  s.gripper_payload = rng.uniform(r.payload_lo, r.payload_hi);
  s.push_velocity = rng.uniform(r.push_lo, r.push_hi);
  s.push_interval = r.push_interval;
  return s;
}

/// Sample that leaves nominal parameters untouched.
inline RandomizationSample nominal_randomization() { return {}; }

inline PlantParams apply(const RandomizationSample& s, PlantParams p) {
  p.friction *= s.friction;
  p.base_mass += s.body_mass;
  p.com_offset += s.base_com;
  p.motor_strength_scale *= s.motor_strength;
  p.payload += s.gripper_payload;
  p.push_velocity = s.push_velocity;
  p.push_interval = s.push_interval;
  return p;
}

}  // namespace uniforce
