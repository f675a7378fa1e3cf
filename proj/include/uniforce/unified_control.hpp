#pragma once

#include <cmath>
#include <optional>
#include <string>

#include <Eigen/Core>

#include "uniforce/core.hpp"
#include "uniforce/plant.hpp"

namespace uniforce {

/// Virtual compliance: K converts EE force to position offset, D converts
/// base force to velocity offset.
struct ImpedanceParams {
  double K = 100.0;  // N/m
  double D = 75.0;   // N s/m

  void validate() const {
    if (!(K > 0.0 && std::isfinite(K))) throw Error(ErrorCode::InvalidArgument, "K must be finite and > 0");
    if (!(D > 0.0 && std::isfinite(D))) throw Error(ErrorCode::InvalidArgument, "D must be finite and > 0");
  }
};

/// The four command channels: base velocity, EE position, EE force, base force.
struct CommandBundle {
  BaseVelocity v_base_cmd{};
  Vec3 x_ee_cmd = Vec3::Zero();
  Vec3 F_ee_cmd = Vec3::Zero();
  Vec3 F_base_cmd = Vec3::Zero();

  bool operator==(const CommandBundle& o) const {
    return v_base_cmd == o.v_base_cmd && x_ee_cmd == o.x_ee_cmd && F_ee_cmd == o.F_ee_cmd &&
           F_base_cmd == o.F_base_cmd;
  }
};

struct ControlMode {
  enum class Kind { Position, ForceControl, Impedance, ForceTracking, Hybrid };

  Kind kind = Kind::Position;
  Vec3 tangent = Vec3::UnitY();  // Hybrid only

  static ControlMode position() { return {Kind::Position, Vec3::UnitY()}; }
  static ControlMode force() { return {Kind::ForceControl, Vec3::UnitY()}; }
  static ControlMode impedance() { return {Kind::Impedance, Vec3::UnitY()}; }
  static ControlMode force_tracking() { return {Kind::ForceTracking, Vec3::UnitY()}; }
  static ControlMode hybrid(const Vec3& tangent) {
    if (!tangent.allFinite() || std::abs(tangent.norm() - 1.0) > 1e-9)
      throw Error(ErrorCode::InvalidArgument, "hybrid tangent must be unit-norm");
    return {Kind::Hybrid, tangent};
  }

  bool operator==(const ControlMode& o) const {
    return kind == o.kind && (kind != Kind::Hybrid || tangent == o.tangent);
  }
};

inline const char* to_string(ControlMode::Kind kind) {
  switch (kind) {
    case ControlMode::Kind::Position: return "position";
    case ControlMode::Kind::ForceControl: return "force";
    case ControlMode::Kind::Impedance: return "impedance";
    case ControlMode::Kind::ForceTracking: return "force-tracking";
    case ControlMode::Kind::Hybrid: return "hybrid";
  }
  return "position";
}

inline ControlMode::Kind mode_kind_from_string(const std::string& s) {
  if (s == "position") return ControlMode::Kind::Position;
  if (s == "force") return ControlMode::Kind::ForceControl;
  if (s == "impedance") return ControlMode::Kind::Impedance;
  if (s == "force-tracking") return ControlMode::Kind::ForceTracking;
  if (s == "hybrid") return ControlMode::Kind::Hybrid;
  throw Error(ErrorCode::InvalidArgument, "unknown control mode '" + s + "'");
}

/// x_target = x_cmd + (F_net + F_cmd) / K.
///
/// F_net is the physical net environment force on the end-effector. A
/// reaction caused by pressing with F_cmd enters F_net with the opposing
/// sign, so at a force-control equilibrium F_net = -F_cmd and the target
/// collapses back onto x_cmd.
inline Vec3 compute_ee_target(const Vec3& x_cmd, const Vec3& F_cmd, const Vec3& F_net_measured, double K) {
  if (!(K > 0.0)) throw Error(ErrorCode::InvalidArgument, "K must be > 0");
  return x_cmd + (F_net_measured + F_cmd) / K;
}

/// Planar velocity compensation (F_net + F_cmd) / D. Yaw passes through.
inline BaseVelocity compute_base_target(const BaseVelocity& v_cmd, const Vec3& F_base_cmd, const Vec3& F_base_net,
                                        double D) {
  if (!(D > 0.0)) throw Error(ErrorCode::InvalidArgument, "D must be > 0");
  const Vec3 f = F_base_net + F_base_cmd;
  return {v_cmd.vx + f.x() / D, v_cmd.vy + f.y() / D, v_cmd.wz};
}

/// One force-tracking tick: the command follows the sensed force.
inline Vec3 force_tracking_update(const Vec3& x_cmd, const Vec3& F_net_measured, double K) {
  if (!(K > 0.0)) throw Error(ErrorCode::InvalidArgument, "K must be > 0");
  return x_cmd + F_net_measured / K;
}

struct ResolvedTargets {
  Vec3 x_target = Vec3::Zero();
  BaseVelocity v_base_target{};
};

/// Tangential share of F_cmd that a hybrid command may carry before it is
/// rejected as ill-posed.
inline constexpr double kHybridTangentialTolerance = 1e-6;

/// Maps a mode + commands + measured net forces onto EE and base targets.
/// For ForceTracking, cmds.x_ee_cmd is the tracked command held by the caller.
inline ResolvedTargets resolve(const ControlMode& mode, const CommandBundle& cmds, const Vec3& F_ee_net,
                               const Vec3& F_base_net, const ImpedanceParams& params) {
  params.validate();
  ResolvedTargets out;
  const Vec3 zero = Vec3::Zero();
  using Kind = ControlMode::Kind;
  switch (mode.kind) {
    case Kind::Position:
      out.x_target = cmds.x_ee_cmd;
      break;
    case Kind::ForceControl:
      out.x_target = compute_ee_target(cmds.x_ee_cmd, cmds.F_ee_cmd, F_ee_net, params.K);
      break;
    case Kind::Impedance:
      out.x_target = compute_ee_target(cmds.x_ee_cmd, zero, F_ee_net, params.K);
      break;
    case Kind::ForceTracking:
      out.x_target = force_tracking_update(cmds.x_ee_cmd, F_ee_net, params.K);
      break;
    case Kind::Hybrid: {
      const Vec3& t = mode.tangent;
      if (std::abs(t.norm() - 1.0) > 1e-9) throw Error(ErrorCode::InvalidArgument, "hybrid tangent must be unit-norm");
      if (std::abs(t.dot(cmds.F_ee_cmd)) > kHybridTangentialTolerance)
        throw Error(ErrorCode::ModeCommandMismatch, "hybrid force command has a tangential component");
      const Eigen::Matrix3d normal_proj = Eigen::Matrix3d::Identity() - t * t.transpose();
      out.x_target = cmds.x_ee_cmd + normal_proj * (F_ee_net + cmds.F_ee_cmd) / params.K;
      break;
    }
  }
  if (mode.kind == Kind::Position) {
    out.v_base_target = cmds.v_base_cmd;
  } else {
    out.v_base_target = compute_base_target(cmds.v_base_cmd, cmds.F_base_cmd, F_base_net, params.D);
  }
  return out;
}

/// Force command that the mode actually acts on.
inline Vec3 active_force_command(const ControlMode& mode, const CommandBundle& cmds) {
  using Kind = ControlMode::Kind;
  if (mode.kind == Kind::ForceControl || mode.kind == Kind::Hybrid) return cmds.F_ee_cmd;
  return Vec3::Zero();
}

struct ControllerConfig {
  ImpedanceParams impedance{};
  double compensation_alpha = 0.1;  // per-tick smoothing of (F_net + F_cmd)
  double feedforward_alpha = 0.2;   // per-tick smoothing of the load feed-forward
  double max_setpoint_speed = 1.5;  // m/s slew limit on the PD setpoint, 0 disables
};

struct ControlOutput {
  ResolvedTargets targets;  // unified targets (what the reward scores against)
  PlantTarget plant;        // what the inner PD actually receives
  Vec3 tracked_cmd = Vec3::Zero();
};

/// Analytic stand-in for the learned whole-body actor.
///
/// Wraps the pure `resolve` with the two bits of state a real loop needs: a
/// first-order smoothing of the compensation term and of the load
/// feed-forward, and the drifting command of force-tracking mode. The inner
/// PD setpoint is x_target - F_ff / kp, so the EE settles on x_target even
/// under load.
class Controller {
 public:
  Controller() = default;
  Controller(ControllerConfig config, const PlantParams& plant) : config_(config), plant_(plant) {
    config_.impedance.validate();
    if (!(config_.compensation_alpha > 0.0 && config_.compensation_alpha <= 1.0) ||
        !(config_.feedforward_alpha > 0.0 && config_.feedforward_alpha <= 1.0))
      throw Error(ErrorCode::InvalidArgument, "filter coefficients must lie in (0, 1]");
    if (!(config_.max_setpoint_speed >= 0.0)) throw Error(ErrorCode::InvalidArgument, "max_setpoint_speed must be >= 0");
  }

  ControlOutput tick(const ControlMode& mode, const CommandBundle& cmds, const Vec3& F_ee_hat, const Vec3& F_base_hat) {
    using Kind = ControlMode::Kind;
    const Vec3 f_cmd = active_force_command(mode, cmds);
    const Vec3 base_cmd = mode.kind == Kind::Position ? Vec3::Zero() : cmds.F_base_cmd;
    comp_ee_ += config_.compensation_alpha * ((F_ee_hat + f_cmd) - comp_ee_);
    comp_base_ += config_.compensation_alpha * ((F_base_hat + base_cmd) - comp_base_);
    feedforward_ += config_.feedforward_alpha * (F_ee_hat - feedforward_);

    CommandBundle effective = cmds;
    if (mode.kind == Kind::ForceTracking) {
      if (!tracked_ || !last_seen_cmd_ || *last_seen_cmd_ != cmds.x_ee_cmd) tracked_ = cmds.x_ee_cmd;
      effective.x_ee_cmd = *tracked_;
    } else {
      tracked_.reset();
    }
    last_seen_cmd_ = cmds.x_ee_cmd;

    // Force tracking integrates the raw estimate: the accumulator smooths on
    // its own, and a lagged filter would keep moving the command after release.
    const Vec3 ee_net = mode.kind == Kind::ForceTracking ? F_ee_hat : Vec3(comp_ee_ - f_cmd);
    ControlOutput out;
    out.targets = resolve(mode, effective, ee_net, comp_base_ - base_cmd, config_.impedance);
    if (mode.kind == Kind::ForceTracking) {
      tracked_ = clamp_to_reach(out.targets.x_target);
      out.targets.x_target = *tracked_;
      out.tracked_cmd = *tracked_;
    } else {
      out.tracked_cmd = cmds.x_ee_cmd;
    }
    Vec3 setpoint = out.targets.x_target - feedforward_ / plant_.pd_kp;
    if (config_.max_setpoint_speed > 0.0 && setpoint_) {
      const Vec3 step = setpoint - *setpoint_;
      const double max_step = config_.max_setpoint_speed * plant_.dt;
      if (step.norm() > max_step) setpoint = *setpoint_ + step * (max_step / step.norm());
    }
    setpoint_ = setpoint;
    out.plant.action = target_to_action(setpoint, plant_.action_scale, plant_.q_default);
    out.plant.v_base = out.targets.v_base_target;
    return out;
  }

  void reset() {
    comp_ee_.setZero();
    comp_base_.setZero();
    feedforward_.setZero();
    tracked_.reset();
    last_seen_cmd_.reset();
    setpoint_.reset();
  }

  /// Starts the slew limiter from a known setpoint (e.g. the plant's current target).
  void seed_setpoint(const Vec3& setpoint) { setpoint_ = setpoint; }

  const ControllerConfig& config() const { return config_; }

 private:
  /// Keeps a drifting command within twice the workspace radius.
  Vec3 clamp_to_reach(const Vec3& x) const {
    const double limit = 2.0 * plant_.workspace.r_max;
    const double n = x.norm();
    return n > limit ? Vec3(x * (limit / n)) : x;
  }

  ControllerConfig config_{};
  PlantParams plant_{};
  Vec3 comp_ee_ = Vec3::Zero();
  Vec3 comp_base_ = Vec3::Zero();
  Vec3 feedforward_ = Vec3::Zero();
  std::optional<Vec3> tracked_;
  std::optional<Vec3> last_seen_cmd_;
  std::optional<Vec3> setpoint_;
};

}  // namespace uniforce
