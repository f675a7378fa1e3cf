#pragma once

#include <array>
#include <cmath>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "uniforce/session.hpp"

namespace uniforce {

inline constexpr std::uint64_t kSaltTrackCommands = 30;

// ---------------------------------------------------------------------------
// Tracking evaluation

struct TrackEvalOptions {
  int steps = 6000;
  double hold = 2.0;  // s per random command
  double tail = 0.5;  // s at the end of each hold scored as steady state
  bool matched_forces = false;  // EE and base disturbances with F_cmd = -F_ext
  bool randomize = false;
  PlantParams nominal{};
  ControllerConfig controller{};
  CommandRanges ranges{};
  std::shared_ptr<const ForceEstimator> control_estimator;  // null: oracle
  std::shared_ptr<const ForceEstimator> probe;  // scored for the estimation columns; null: control estimator
};

/// One command hold: mean absolute steady-state errors per axis.
struct TrackWindow {
  int index = 0;
  double t_start = 0.0;
  Vec3 x_cmd = Vec3::Zero();
  Vec3 track_err = Vec3::Zero();  // |x_ee - x_cmd|
  Vec3 est_err = Vec3::Zero();    // |x_hat - x_ee|
  Vec3 force_err = Vec3::Zero();  // |F_hat - F_net|
};

struct TrackEvalResult {
  std::vector<TrackWindow> windows;

  /// Share of windows whose tracking error is below the threshold on every axis.
  double fraction_within(double threshold) const {
    if (windows.empty()) return 0.0;
    int ok = 0;
    for (const auto& w : windows) ok += (w.track_err.array() < threshold).all() ? 1 : 0;
    return static_cast<double>(ok) / static_cast<double>(windows.size());
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << std::setprecision(9);
    os << "window,t_start,x_cmd_x,x_cmd_y,x_cmd_z,track_err_x,track_err_y,track_err_z,est_err_x,est_err_y,est_err_z\n";
    for (const auto& w : windows) {
      os << w.index << ',' << w.t_start;
      for (int a = 0; a < 3; ++a) os << ',' << w.x_cmd[a];
      for (int a = 0; a < 3; ++a) os << ',' << w.track_err[a];
      for (int a = 0; a < 3; ++a) os << ',' << w.est_err[a];
      os << '\n';
    }
    return os.str();
  }

  /// Errors binned by the commanded coordinate along each axis.
  std::string bins_csv(double width = 0.1) const {
    struct Acc {
      int n = 0;
      double track = 0.0, est = 0.0;
    };
    std::array<std::map<long, Acc>, 3> bins;
    for (const auto& w : windows)
      for (int a = 0; a < 3; ++a) {
        auto& acc = bins[a][static_cast<long>(std::floor(w.x_cmd[a] / width))];
        ++acc.n;
        acc.track += w.track_err[a];
        acc.est += w.est_err[a];
      }
    std::ostringstream os;
    os << std::setprecision(9);
    os << "axis,bin_lo,bin_hi,windows,mean_track_err,mean_est_err\n";
    const char* axes[3] = {"x", "y", "z"};
    for (int a = 0; a < 3; ++a)
      for (const auto& [b, acc] : bins[a])
        os << axes[a] << ',' << b * width << ',' << (b + 1) * width << ',' << acc.n << ',' << acc.track / acc.n << ','
           << acc.est / acc.n << '\n';
    return os.str();
  }
};

inline TrackEvalResult track_eval(std::uint64_t seed, const TrackEvalOptions& opts = {}) {
  SceneSpec scene;
  scene.randomize = opts.randomize;
  scene.label = opts.matched_forces ? "track-eval-matched" : "track-eval";
  scene.disturbance.ee = opts.matched_forces;
  scene.disturbance.base = opts.matched_forces;
  Session session(scene, seed, opts.nominal, opts.controller, opts.control_estimator);
  Rng rng(derive_seed(seed, kSaltTrackCommands));
  const double dt = opts.nominal.dt;
  const int hold = std::max(1, static_cast<int>(std::lround(opts.hold / dt)));
  const int tail = std::clamp(static_cast<int>(std::lround(opts.tail / dt)), 1, hold);
  const ControlMode mode = opts.matched_forces ? ControlMode::force() : ControlMode::position();
  const ForceEstimator& probe = opts.probe ? *opts.probe : session.estimator();

  TrackEvalResult result;
  CommandBundle cmd;
  TrackWindow w;
  for (int k = 0; k < opts.steps; ++k) {
    const int phase = k % hold;
    if (phase == 0) {
      cmd = sample_commands(rng, opts.ranges);
      cmd.F_ee_cmd.setZero();
      cmd.F_base_cmd.setZero();
      w = TrackWindow{};
      w.index = k / hold;
      w.t_start = session.state().t;
      w.x_cmd = cmd.x_ee_cmd;
    }
    if (opts.matched_forces) {
      const Disturbance d = session.disturbance_now();
      cmd.F_ee_cmd = -d.ee;
      cmd.F_base_cmd = -d.base;
    }
    session.advance(mode, cmd);
    if (phase >= hold - tail) {
      const PlantState& s = session.state();
      const EstimatorOutput est = probe.estimate(session.history());
      w.track_err += (s.x_ee - cmd.x_ee_cmd).cwiseAbs() / tail;
      w.est_err += (est.x_hat_ee - s.x_ee).cwiseAbs() / tail;
      w.force_err += (est.F_hat_ee - s.net_force_ee).cwiseAbs() / tail;
    }
    if (phase == hold - 1) result.windows.push_back(w);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Force sweep against a wall

struct ForceEvalOptions {
  std::vector<double> levels{0, 10, 20, 30, 40, 50, 60};  // N
  std::vector<Vec3> contact_points{Vec3(0.6, 0.0, 0.0), Vec3(0.6, 0.1, 0.0), Vec3(0.6, -0.1, 0.0),
                                   Vec3(0.6, 0.0, 0.1), Vec3(0.6, 0.0, -0.1)};
  double standoff = 0.1;  // m, start distance from the wall
  double settle = 4.0;    // s
  double measure = 1.0;   // s
  PlantParams nominal{};
  ControllerConfig controller{};
  std::shared_ptr<const ForceEstimator> control_estimator;
  std::shared_ptr<const ForceEstimator> probe;
};

struct ForceEvalRow {
  double level = 0.0;
  int point = 0;
  Vec3 contact_point = Vec3::Zero();
  double achieved = 0.0;  // mean force the EE exerts on the wall along the command
  double est_error = 0.0; // RMS of F_hat - F_net along the command axis
  double est_bias = 0.0;

  double abs_error() const { return std::abs(achieved - level); }
  double rel_error() const { return level > 0.0 ? abs_error() / level : 0.0; }
};

struct ForceEvalResult {
  std::vector<ForceEvalRow> rows;

  std::string to_csv() const {
    std::ostringstream os;
    os << std::setprecision(9);
    os << "level_N,point,px,py,pz,achieved_N,abs_error_N,rel_error,est_rms_N,est_bias_N\n";
    for (const auto& r : rows)
      os << r.level << ',' << r.point << ',' << r.contact_point.x() << ',' << r.contact_point.y() << ','
         << r.contact_point.z() << ',' << r.achieved << ',' << r.abs_error() << ',' << r.rel_error() << ',' << r.est_error
         << ',' << r.est_bias << '\n';
    return os.str();
  }

  /// Per-level summary: mean achieved force, worst relative error, estimator RMS.
  std::string summary_csv() const {
    std::map<double, std::vector<const ForceEvalRow*>> by_level;
    for (const auto& r : rows) by_level[r.level].push_back(&r);
    std::ostringstream os;
    os << std::setprecision(9);
    os << "level_N,mean_achieved_N,max_abs_error_N,max_rel_error,est_rms_N\n";
    for (const auto& [level, rs] : by_level) {
      double mean = 0.0, max_abs = 0.0, max_rel = 0.0, est = 0.0;
      for (const auto* r : rs) {
        mean += r->achieved / rs.size();
        max_abs = std::max(max_abs, r->abs_error());
        max_rel = std::max(max_rel, r->rel_error());
        est += r->est_error * r->est_error / rs.size();
      }
      os << level << ',' << mean << ',' << max_abs << ',' << max_rel << ',' << std::sqrt(est) << '\n';
    }
    return os.str();
  }
};

inline ForceEvalResult force_eval(std::uint64_t seed, const ForceEvalOptions& opts = {}) {
  ForceEvalResult result;
  const double dt = opts.nominal.dt;
  const int settle = static_cast<int>(std::lround(opts.settle / dt));
  const int measure = std::max(1, static_cast<int>(std::lround(opts.measure / dt)));
  for (std::size_t p = 0; p < opts.contact_points.size(); ++p) {
    const Vec3& point = opts.contact_points[p];
    for (double level : opts.levels) {
      Wall wall;
      wall.point = point;
      SceneSpec scene;
      scene.env = wall;
      scene.x_home = point + wall.normal * opts.standoff;
      scene.label = "force-eval";
      Session session(scene, seed, opts.nominal, opts.controller, opts.control_estimator);
      const ForceEstimator& probe = opts.probe ? *opts.probe : session.estimator();
      CommandBundle cmd;
      cmd.x_ee_cmd = point;
      cmd.F_ee_cmd = -wall.normal * level;
      const Vec3 axis = -wall.normal;
      ForceEvalRow row;
      row.level = level;
      row.point = static_cast<int>(p);
      row.contact_point = point;
      double sq = 0.0, bias = 0.0;
      for (int k = 0; k < settle + measure; ++k) {
        session.advance(ControlMode::force(), cmd);
        if (k < settle) continue;
        const PlantState& s = session.state();
        row.achieved += -s.contact_force.dot(axis) / measure;
        const double e = (probe.estimate(session.history()).F_hat_ee - s.net_force_ee).dot(axis);
        sq += e * e / measure;
        bias += e / measure;
      }
      row.est_error = std::sqrt(sq);
      row.est_bias = bias;
      result.rows.push_back(row);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Scripted mode demonstrations

struct DemoLog {
  std::vector<double> t;
  std::vector<PlantState> states;
  std::vector<CommandBundle> cmds;
  std::vector<Vec3> applied;  // scripted external force on the EE
  std::vector<EstimatorOutput> estimates;
  std::vector<Vec3> targets;

  void add(const Session::Tick& tick, const CommandBundle& cmd, const Vec3& applied_force) {
    t.push_back(tick.state.t);
    states.push_back(tick.state);
    cmds.push_back(cmd);
    applied.push_back(applied_force);
    estimates.push_back(tick.estimate);
    targets.push_back(tick.control.targets.x_target);
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << std::setprecision(9);
    os << "t,x_ee_x,x_ee_y,x_ee_z,x_cmd_x,x_cmd_y,x_cmd_z,x_target_x,x_target_y,x_target_z,F_cmd_x,F_cmd_y,F_cmd_z,"
          "F_applied_x,F_applied_y,F_applied_z,contact_x,contact_y,contact_z,F_hat_x,F_hat_y,F_hat_z,v_base_x,v_base_y\n";
    for (std::size_t i = 0; i < t.size(); ++i) {
      const auto& s = states[i];
      os << t[i];
      for (const Vec3* v : {&s.x_ee, &cmds[i].x_ee_cmd, &targets[i], &cmds[i].F_ee_cmd, &applied[i], &s.contact_force,
                            &estimates[i].F_hat_ee})
        for (int a = 0; a < 3; ++a) os << ',' << (*v)[a];
      os << ',' << s.v_base.vx << ',' << s.v_base.vy << '\n';
    }
    return os.str();
  }
};

struct DemoResult {
  std::string mode;
  DemoLog log;
  std::map<std::string, double> metrics;
  bool pass = false;

  std::string metrics_csv() const {
    std::ostringstream os;
    os << std::setprecision(9) << "metric,value\n";
    for (const auto& [k, v] : metrics) os << k << ',' << v << '\n';
    os << "pass," << (pass ? 1 : 0) << '\n';
    return os.str();
  }
};

struct DemoOptions {
  PlantParams nominal{};
  ControllerConfig controller{};
  std::shared_ptr<const ForceEstimator> control_estimator;
};

inline constexpr std::array<const char*, 7> kDemoModes{"position", "force",     "impedance", "force-tracking",
                                                       "hybrid",   "base-halt", "base-kick"};

namespace demo_detail {

inline Session make_session(const SceneSpec& scene, std::uint64_t seed, const DemoOptions& o) {
  return Session(scene, seed, o.nominal, o.controller, o.control_estimator);
}

inline int ticks(double seconds, const DemoOptions& o) { return static_cast<int>(std::lround(seconds / o.nominal.dt)); }

}  // namespace demo_detail

/// Step response in position mode.
inline DemoResult demo_position(std::uint64_t seed, const DemoOptions& o = {}) {
  using namespace demo_detail;
  DemoResult r;
  r.mode = "position";
  SceneSpec scene;
  Session s = make_session(scene, seed, o);
  CommandBundle cmd;
  cmd.x_ee_cmd = scene.x_home + Vec3(0.0, 0.15, 0.1);
  for (int k = 0; k < ticks(3.0, o); ++k) r.log.add(s.advance(ControlMode::position(), cmd), cmd, Vec3::Zero());
  r.metrics["final_error_m"] = (s.state().x_ee - cmd.x_ee_cmd).norm();
  r.pass = r.metrics["final_error_m"] < 0.01;
  return r;
}

/// Payload held by an upward force command; the EE must hold its height.
inline DemoResult demo_force_payload(std::uint64_t seed, const DemoOptions& o = {}, double mass = 2.5,
                                     double lift = 25.0) {
  using namespace demo_detail;
  DemoResult r;
  r.mode = "force";
  SceneSpec scene;
  scene.env = Payload{mass};
  Session s = make_session(scene, seed, o);
  CommandBundle cmd;
  cmd.x_ee_cmd = scene.x_home;
  cmd.F_ee_cmd = Vec3(0.0, 0.0, lift);
  double max_z = 0.0;
  const int settle = ticks(1.0, o);
  for (int k = 0; k < ticks(6.0, o); ++k) {
    r.log.add(s.advance(ControlMode::force(), cmd), cmd, Vec3::Zero());
    if (k >= settle) max_z = std::max(max_z, std::abs(s.state().x_ee.z() - cmd.x_ee_cmd.z()));
  }
  r.metrics["payload_kg"] = mass;
  r.metrics["lift_command_N"] = lift;
  r.metrics["max_z_error_m"] = max_z;
  r.pass = max_z < 0.02;
  return r;
}

/// Constant external push in impedance mode; displacement should equal F/K.
inline DemoResult demo_impedance(std::uint64_t seed, const DemoOptions& o = {}, const Vec3& push = Vec3(20.0, 0.0, 0.0)) {
  using namespace demo_detail;
  DemoResult r;
  r.mode = "impedance";
  SceneSpec scene;
  Session s = make_session(scene, seed, o);
  CommandBundle cmd;
  cmd.x_ee_cmd = scene.x_home;
  const int on = ticks(0.5, o), total = ticks(5.0, o);
  for (int k = 0; k < total; ++k) {
    const Vec3 f = k >= on ? push : Vec3::Zero();
    r.log.add(s.advance(ControlMode::impedance(), cmd, {f, Vec3::Zero()}), cmd, f);
  }
  const Vec3 disp = s.state().x_ee - cmd.x_ee_cmd;
  const Vec3 expected = push / o.controller.impedance.K;
  r.metrics["displacement_m"] = disp.norm();
  r.metrics["expected_m"] = expected.norm();
  r.metrics["rel_error"] = (disp - expected).norm() / expected.norm();
  r.pass = r.metrics["rel_error"] < 0.02;
  return r;
}

/// Ramp-hold-release push in force-tracking mode; the EE must stay where
/// it was left. Drift is measured over `observe` seconds starting once the
/// inner loop has settled (`settle` after the force reaches zero); the
/// settling motion itself is reported as catch-up.
inline DemoResult demo_force_tracking(std::uint64_t seed, const DemoOptions& o = {},
                                      const Vec3& push = Vec3(0.0, 1.0, 0.0)) {
  using namespace demo_detail;
  DemoResult r;
  r.mode = "force-tracking";
  SceneSpec scene;
  Session s = make_session(scene, seed, o);
  CommandBundle cmd;
  cmd.x_ee_cmd = scene.x_home;
  ForceProfile profile;
  profile.target = push;
  profile.t_start = 0.5;
  profile.t_ramp_up = 0.2;
  profile.t_hold = 0.2;
  profile.t_ramp_down = 0.2;
  profile.t_zero = 0.0;
  const double release = profile.t_end();
  const double settle = 0.5, observe = 5.0;
  std::optional<Vec3> x_release, x_settled, target_settled;
  double drift = 0.0, target_drift = 0.0;
  const int total = ticks(release + settle + observe, o);
  for (int k = 0; k < total; ++k) {
    const double t = s.state().t;
    const Vec3 f = t >= profile.t_start ? force_profile_value(profile, t) : Vec3::Zero();
    const auto tick = s.advance(ControlMode::force_tracking(), cmd, {f, Vec3::Zero()});
    r.log.add(tick, cmd, f);
    const double now = s.state().t;
    if (!x_release && now >= release - 1e-9) x_release = s.state().x_ee;
    if (!x_settled && now >= release + settle - 1e-9) {
      x_settled = s.state().x_ee;
      target_settled = tick.control.targets.x_target;
    }
    if (x_settled) {
      drift = std::max(drift, (s.state().x_ee - *x_settled).norm());
      target_drift = std::max(target_drift, (tick.control.targets.x_target - *target_settled).norm());
    }
  }
  r.metrics["displacement_m"] = (*x_settled - scene.x_home).norm();
  r.metrics["catch_up_m"] = (*x_settled - *x_release).norm();
  r.metrics["drift_m"] = drift;
  r.metrics["target_drift_m"] = target_drift;
  r.metrics["observe_s"] = observe;
  r.pass = drift < 0.01 && r.metrics["displacement_m"] > 0.01;
  return r;
}

/// Tangential sweep along a wall while pressing with a normal force.
inline DemoResult demo_hybrid(std::uint64_t seed, const DemoOptions& o = {}, double normal_force = 30.0) {
  using namespace demo_detail;
  DemoResult r;
  r.mode = "hybrid";
  Wall wall;
  SceneSpec scene;
  scene.env = wall;
  scene.x_home = wall.point + wall.normal * 0.05 + Vec3(0.0, -0.1, 0.0);
  Session s = make_session(scene, seed, o);
  const Vec3 tangent = Vec3::UnitY();
  const Vec3 axis = -wall.normal;
  CommandBundle cmd;
  cmd.F_ee_cmd = axis * normal_force;
  const int approach = ticks(2.0, o), sweep = ticks(4.0, o);
  double max_tan = 0.0, max_rel = 0.0;
  for (int k = 0; k < approach + sweep; ++k) {
    const double u = k < approach ? 0.0 : static_cast<double>(k - approach) / sweep;
    cmd.x_ee_cmd = wall.point + tangent * (-0.1 + 0.2 * u);
    r.log.add(s.advance(ControlMode::hybrid(tangent), cmd), cmd, Vec3::Zero());
    if (k >= approach) {
      max_tan = std::max(max_tan, std::abs((s.state().x_ee - cmd.x_ee_cmd).dot(tangent)));
      max_rel = std::max(max_rel, std::abs(-s.state().contact_force.dot(axis) - normal_force) / normal_force);
    }
  }
  r.metrics["max_tangential_error_m"] = max_tan;
  r.metrics["max_normal_rel_error"] = max_rel;
  r.pass = max_tan < 0.02 && max_rel < 0.05;
  return r;
}

/// Base velocity command opposed by an external base force of -v*D: the
/// base should halt.
inline DemoResult demo_base_halt(std::uint64_t seed, const DemoOptions& o = {}, double v_cmd = 0.5) {
  using namespace demo_detail;
  DemoResult r;
  r.mode = "base-halt";
  SceneSpec scene;
  Session s = make_session(scene, seed, o);
  CommandBundle cmd;
  cmd.x_ee_cmd = scene.x_home;
  cmd.v_base_cmd.vx = v_cmd;
  const Vec3 push(-v_cmd * o.controller.impedance.D, 0.0, 0.0);
  double speed = 0.0;
  const int total = ticks(4.0, o), measure = ticks(1.0, o);
  for (int k = 0; k < total; ++k) {
    r.log.add(s.advance(ControlMode::impedance(), cmd, {Vec3::Zero(), push}), cmd, Vec3::Zero());
    if (k >= total - measure) speed = std::max(speed, std::hypot(s.state().v_base.vx, s.state().v_base.vy));
  }
  r.metrics["v_cmd_mps"] = v_cmd;
  r.metrics["base_force_N"] = push.x();
  r.metrics["max_speed_mps"] = speed;
  r.pass = speed < 0.05;
  return r;
}

/// Zero velocity command with an external base push: the base yields at F/D.
inline DemoResult demo_base_kick(std::uint64_t seed, const DemoOptions& o = {}, double force = 30.0) {
  using namespace demo_detail;
  DemoResult r;
  r.mode = "base-kick";
  SceneSpec scene;
  Session s = make_session(scene, seed, o);
  CommandBundle cmd;
  cmd.x_ee_cmd = scene.x_home;
  const Vec3 push(force, 0.0, 0.0);
  double speed = 0.0;
  const int total = ticks(4.0, o), measure = ticks(1.0, o);
  for (int k = 0; k < total; ++k) {
    r.log.add(s.advance(ControlMode::impedance(), cmd, {Vec3::Zero(), push}), cmd, Vec3::Zero());
    if (k >= total - measure) speed += std::hypot(s.state().v_base.vx, s.state().v_base.vy) / measure;
  }
  const double expected = force / o.controller.impedance.D;
  r.metrics["base_force_N"] = force;
  r.metrics["mean_speed_mps"] = speed;
  r.metrics["expected_mps"] = expected;
  r.metrics["rel_error"] = std::abs(speed - expected) / expected;
  r.pass = r.metrics["rel_error"] < 0.10;
  return r;
}

inline DemoResult run_demo(const std::string& mode, std::uint64_t seed, const DemoOptions& o = {}) {
  if (mode == "position") return demo_position(seed, o);
  if (mode == "force") return demo_force_payload(seed, o);
  if (mode == "impedance") return demo_impedance(seed, o);
  if (mode == "force-tracking") return demo_force_tracking(seed, o);
  if (mode == "hybrid") return demo_hybrid(seed, o);
  if (mode == "base-halt") return demo_base_halt(seed, o);
  if (mode == "base-kick") return demo_base_kick(seed, o);
  throw Error(ErrorCode::ConfigError, "unknown demo mode '" + mode + "'");
}

}  // namespace uniforce
