#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "uniforce/episode.hpp"
#include "uniforce/estimator_data.hpp"
#include "uniforce/experiments.hpp"
#include "uniforce/imitation.hpp"
#include "uniforce/rewards.hpp"

namespace uniforce {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;

  std::string line() const {
    std::ostringstream os;
    os << (pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << detail << " ["
       << std::fixed << std::setprecision(1) << seconds << " s]";
    return os.str();
  }
};

struct AcceptanceOptions {
  std::uint64_t seed = 1;
  std::filesystem::path golden_episode;  // criterion 9
  std::set<int> only;                    // empty: all criteria
  std::function<void(const CriterionResult&)> on_result;
};

namespace acceptance_detail {

inline CriterionResult make_result(int id, std::string name) {
  CriterionResult r;
  r.id = id;
  r.name = std::move(name);
  return r;
}

inline std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Central finite differences of the mean squared loss against the
/// analytic gradient; returns |g - g_fd| / max(|g|, |g_fd|).
inline double gradient_relative_error(const Mlp<double>& net, const Mlp<double>::Mat& X, const Mlp<double>::Mat& T,
                                      double h = 1e-6) {
  Mlp<double>::Gradients g;
  net.loss_and_gradient(X, T, g);
  const auto analytic = Mlp<double>::flatten(g);
  Mlp<double> probe = net;
  auto theta = net.flat_parameters();
  std::vector<double> numeric(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double keep = theta[i];
    theta[i] = keep + h;
    probe.set_flat_parameters(theta);
    const double up = probe.loss(X, T);
    theta[i] = keep - h;
    probe.set_flat_parameters(theta);
    const double down = probe.loss(X, T);
    theta[i] = keep;
    numeric[i] = (up - down) / (2.0 * h);
  }
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::max(std::sqrt(std::max(na, nn)), 1e-12);
  return std::sqrt(diff) / denom;
}

/// Small model shaped like a real network, with nonzero skip weights.
inline double random_model_gradient_error(int inputs, std::vector<int> hidden, int outputs, Activation act,
                                          std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> sizes{inputs};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(outputs);
  Mlp<double> net(sizes, act, rng, true);
  Mlp<double>::Mat S(outputs, inputs);
  for (Eigen::Index i = 0; i < S.size(); ++i) S.data()[i] = rng.uniform(-0.1, 0.1);
  Mlp<double>::Vec b(outputs);
  for (int i = 0; i < outputs; ++i) b[i] = rng.uniform(-0.1, 0.1);
  net.set_linear_part(S, b);
  auto theta = net.flat_parameters();
  for (auto& v : theta) v += rng.uniform(-0.05, 0.05);  // also moves the output layer off zero
  net.set_flat_parameters(theta);
  const int batch = 8;
  Mlp<double>::Mat X(inputs, batch), T(outputs, batch);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = rng.uniform(-1.0, 1.0);
  for (Eigen::Index i = 0; i < T.size(); ++i) T.data()[i] = rng.uniform(-1.0, 1.0);
  return gradient_relative_error(net, X, T);
}

}  // namespace acceptance_detail

// ---------------------------------------------------------------------------
// Criteria

inline CriterionResult criterion_position_tracking(std::uint64_t seed) {
  using namespace acceptance_detail;
  const auto t0 = std::chrono::steady_clock::now();
  const TrackEvalResult r = track_eval(seed);
  CriterionResult c = make_result(1, "position tracking");
  c.seconds = seconds_since(t0);
  const double frac = r.fraction_within(0.01);
  c.pass = frac >= 0.95 && c.seconds < 30.0;
  c.detail = fmt(frac * 100.0) + "% of " + std::to_string(r.windows.size()) +
             " windows within 0.01 m per axis (need >= 95%, < 30 s)";
  return c;
}

inline CriterionResult criterion_estimation(std::uint64_t seed) {
  using namespace acceptance_detail;
  const auto t0 = std::chrono::steady_clock::now();
  const EstimatorPipelineResult r = run_estimator_pipeline(seed);
  CriterionResult c = make_result(2, "estimation accuracy");
  c.seconds = seconds_since(t0);
  const double x_rms = r.learned.max_position_rms(), f_rms = r.learned.max_force_rms();
  const double oracle_rms = r.oracle.max_force_rms();
  c.pass = x_rms < 0.02 && f_rms < 5.0 && oracle_rms < 0.1 && c.seconds < 600.0;
  c.detail = "learned x_ee RMS " + fmt(x_rms) + " m (< 0.02), F_ee RMS " + fmt(f_rms) + " N (< 5), oracle F_ee RMS " +
             fmt(oracle_rms) + " N (< 0.1), " + std::to_string(r.learned.samples) + " held-out windows";
  return c;
}

inline CriterionResult criterion_matched_force_tracking(std::uint64_t seed) {
  using namespace acceptance_detail;
  const auto t0 = std::chrono::steady_clock::now();
  TrackEvalOptions o;
  o.matched_forces = true;
  const TrackEvalResult r = track_eval(seed, o);
  CriterionResult c = make_result(3, "matched-force tracking");
  c.seconds = seconds_since(t0);
  const double frac = r.fraction_within(0.02);
  c.pass = frac >= 0.90;
  c.detail = fmt(frac * 100.0) + "% of " + std::to_string(r.windows.size()) +
             " windows within 0.02 m per axis under disturbances (need >= 90%)";
  return c;
}

inline CriterionResult criterion_force_sweep(std::uint64_t seed) {
  using namespace acceptance_detail;
  const auto t0 = std::chrono::steady_clock::now();
  const ForceEvalResult r = force_eval(seed);
  CriterionResult c = make_result(4, "force control sweep");
  c.seconds = seconds_since(t0);
  double worst_rel = 0.0, worst_zero = 0.0;
  for (const auto& row : r.rows) {
    if (row.level == 0.0) {
      worst_zero = std::max(worst_zero, std::abs(row.achieved));
    } else {
      worst_rel = std::max(worst_rel, row.rel_error());
    }
  }
  c.pass = !r.rows.empty() && worst_rel < 0.05 && worst_zero < 0.5;
  c.detail = "worst relative error " + fmt(worst_rel * 100.0) + "% over 10-60 N (< 5%), |achieved| at 0 N " +
             fmt(worst_zero) + " N (< 0.5)";
  return c;
}

inline CriterionResult criterion_mode_properties(std::uint64_t seed) {
  using namespace acceptance_detail;
  const auto t0 = std::chrono::steady_clock::now();
  const DemoResult imp = demo_impedance(seed);
  const DemoResult track = demo_force_tracking(seed);
  const DemoResult payload = demo_force_payload(seed);
  const DemoResult hybrid = demo_hybrid(seed);
  CriterionResult c = make_result(5, "mode properties");
  c.seconds = seconds_since(t0);
  c.pass = imp.pass && track.pass && payload.pass && hybrid.pass;
  c.detail = "impedance rel error " + fmt(imp.metrics.at("rel_error") * 100.0) + "% (< 2%); tracking drift " +
             fmt(track.metrics.at("drift_m")) + " m (< 0.01); payload max |z error| " +
             fmt(payload.metrics.at("max_z_error_m")) + " m (< 0.02); hybrid tangential " +
             fmt(hybrid.metrics.at("max_tangential_error_m")) + " m (< 0.02), normal " +
             fmt(hybrid.metrics.at("max_normal_rel_error") * 100.0) + "% (< 5%)";
  return c;
}

inline CriterionResult criterion_base_compensation(std::uint64_t seed) {
  using namespace acceptance_detail;
  const auto t0 = std::chrono::steady_clock::now();
  const DemoResult halt = demo_base_halt(seed);
  const DemoResult kick = demo_base_kick(seed);
  CriterionResult c = make_result(6, "base compensation");
  c.seconds = seconds_since(t0);
  c.pass = halt.pass && kick.pass;
  c.detail = "halt speed " + fmt(halt.metrics.at("max_speed_mps")) + " m/s (< 0.05); kick speed " +
             fmt(kick.metrics.at("mean_speed_mps")) + " m/s vs " + fmt(kick.metrics.at("expected_mps")) +
             " (within 10%)";
  return c;
}

/// Reward weights and randomisation ranges, copied by hand from the
/// reference tables; the library defaults must match them exactly.
inline CriterionResult criterion_reward_golden() {
  using namespace acceptance_detail;
  const auto t0 = std::chrono::steady_clock::now();
  const RewardConfig cfg;
  const RandomizationRanges rr;
  struct Literal {
    const char* name;
    double actual, expected;
  };
  const std::vector<Literal> literals{
      {"gripper position weight", cfg.w_gripper_position, 2.0},
      {"gripper position scale", cfg.position_scale, 0.5},
      {"base velocity weight", cfg.w_base_velocity, 2.0},
      {"base velocity scale", cfg.velocity_scale, 0.25},
      {"collision", cfg.w_collision, -5.0},
      {"joint limit", cfg.w_joint_limit, -10.0},
      {"joint limit fraction", cfg.joint_limit_fraction, 0.8},
      {"torques", cfg.w_torques, -5e-6},
      {"joint velocities", cfg.w_joint_velocities, -8e-4},
      {"joint acceleration", cfg.w_joint_acceleration, -2e-7},
      {"action rate", cfg.w_action_rate, -0.02},
      {"torque limit", cfg.w_torque_limit, -0.005},
      {"torque limit fraction", cfg.torque_limit_fraction, 0.9},
      {"contact number", cfg.w_contact_number, 2.0},
      {"contact threshold", cfg.contact_threshold, 5.0},
      {"reference motion", cfg.w_reference_motion, 1.0},
      {"friction lo", rr.friction_lo, 0.3},
      {"friction hi", rr.friction_hi, 2.0},
      {"body mass lo", rr.body_mass_lo, 0.0},
      {"body mass hi", rr.body_mass_hi, 15.0},
      {"base com lo", rr.com_lo, -0.15},
      {"base com hi", rr.com_hi, 0.15},
      {"motor strength lo", rr.motor_lo, 0.85},
      {"motor strength hi", rr.motor_hi, 1.15},
      {"gripper payload lo", rr.payload_lo, 0.0},
      {"gripper payload hi", rr.payload_hi, 0.5},
      {"push lo", rr.push_lo, 0.0},
      {"push hi", rr.push_hi, 0.8},
      {"push interval", rr.push_interval, 8.0},
  };
  std::string mismatches;
  for (const auto& l : literals)
    if (l.actual != l.expected) mismatches += std::string(mismatches.empty() ? "" : ", ") + l.name;

  // Argmax of the EE reward over a grid around each case must land on the
  // grid point nearest the compensated target.
  const double K = ImpedanceParams{}.K;
  struct Case {
    Vec3 x_cmd, F_cmd, F_net;
  };
  const std::vector<Case> cases{
      {Vec3(0.5, 0.0, 0.2), Vec3::Zero(), Vec3::Zero()},
      {Vec3(0.5, 0.1, 0.2), Vec3(10.0, 0.0, 0.0), Vec3::Zero()},
      {Vec3(0.4, -0.1, 0.3), Vec3::Zero(), Vec3(0.0, -8.0, 5.0)},
      {Vec3(0.6, 0.0, 0.0), Vec3(-20.0, 5.0, 0.0), Vec3(12.0, 0.0, -6.0)},
  };
  const double step = 0.01;
  const int n = 30;
  int agree = 0;
  for (const auto& cs : cases) {
    const Vec3 target = compute_ee_target(cs.x_cmd, cs.F_cmd, cs.F_net, K);
    const Vec3 origin = cs.x_cmd - Vec3::Constant(step * n / 2.0);
    double best = -1.0;
    Vec3 arg = Vec3::Zero(), nearest = Vec3::Zero();
    double nearest_d = 1e9;
    for (int i = 0; i <= n; ++i)
      for (int j = 0; j <= n; ++j)
        for (int k = 0; k <= n; ++k) {
          const Vec3 x = origin + step * Vec3(i, j, k);
          const double r = reward_ee_unified(x, cs.x_cmd, cs.F_cmd, cs.F_net, K);
          if (r > best) {
            best = r;
            arg = x;
          }
          const double d = (x - target).norm();
          if (d < nearest_d) {
            nearest_d = d;
            nearest = x;
          }
        }
    if ((arg - nearest).norm() < 1e-12) ++agree;
  }
  CriterionResult c = make_result(7, "reward golden");
  c.seconds = seconds_since(t0);
  c.pass = mismatches.empty() && agree == static_cast<int>(cases.size());
  c.detail = std::to_string(literals.size()) + " table literals " + (mismatches.empty() ? "match" : "differ: " + mismatches) +
             "; argmax agreement on " + std::to_string(agree) + "/" + std::to_string(cases.size()) + " grids";
  return c;
}

inline CriterionResult criterion_gradient_checks(std::uint64_t seed) {
  using namespace acceptance_detail;
  const auto t0 = std::chrono::steady_clock::now();
  double worst_est = 0.0, worst_bc = 0.0;
  for (Activation act : {Activation::Relu, Activation::Tanh}) {
    // estimator: a short observation window in, the 12 estimates out
    worst_est = std::max(worst_est, random_model_gradient_error(static_cast<int>(2 * kObservationDim), {8, 8},
                                                                static_cast<int>(kEstimateDim), act, seed));
    // BC: the full policy window in, position and force commands out
    worst_bc = std::max(worst_bc, random_model_gradient_error(static_cast<int>(kBcWindow * kBcFrameDim), {8, 8}, 6,
                                                              act, seed + 1));
  }
  CriterionResult c = make_result(8, "gradient checks");
  c.seconds = seconds_since(t0);
  c.pass = worst_est < 1e-4 && worst_bc < 1e-4;
  c.detail = "relative error estimator " + fmt(worst_est, 3) + ", BC " + fmt(worst_bc, 3) + " (< 1e-4)";
  return c;
}

inline CriterionResult criterion_determinism(std::uint64_t seed, const std::filesystem::path& golden) {
  using namespace acceptance_detail;
  const auto t0 = std::chrono::steady_clock::now();
  CriterionResult c = make_result(9, "determinism and replay");
  double deviation = std::numeric_limits<double>::infinity();
  std::size_t frames = 0;
  std::string replay_note;
  try {
    const ReplayReport rep = replay(load_episode(golden));
    deviation = rep.max_deviation;
    frames = rep.frames;
  } catch (const Error& e) {
    replay_note = std::string(" (") + e.what() + ")";
  }

  std::vector<std::string> unstable;
  auto check = [&](const char* name, const std::function<std::string()>& produce) {
    if (produce() != produce()) unstable.push_back(name);
  };
  check("track-eval", [&] { return track_eval(seed).to_csv(); });
  check("track-eval matched", [&] {
    TrackEvalOptions o;
    o.matched_forces = true;
    return track_eval(seed, o).to_csv();
  });
  check("force-eval", [&] { return force_eval(seed).to_csv(); });
  for (const char* mode : kDemoModes)
    check(mode, [&] {
      const DemoResult d = run_demo(mode, seed);
      return d.log.to_csv() + d.metrics_csv();
    });
  check("estimator", [&] {
    EstimatorPipelineOptions o;
    o.train_episodes = 4;
    o.eval_episodes = 2;
    o.fit_samples = 512;
    o.steps = 50;
    return run_estimator_pipeline(seed, o).learned.to_csv();
  });
  check("ablation", [&] {
    AblationOptions o;
    o.wipe_episodes = o.latch_episodes = 2;
    o.trials = 2;
    o.steps = 50;
    return ablation_csv(run_ablation(seed, o).rows());
  });
  c.seconds = seconds_since(t0);
  c.pass = frames > 0 && deviation < 1e-9 && unstable.empty();
  std::string which;
  for (const auto& u : unstable) which += (which.empty() ? "" : ", ") + u;
  c.detail = "golden replay max deviation " + fmt(deviation, 3) + " m over " + std::to_string(frames) + " frames" +
             replay_note + " (< 1e-9); CSV reruns " + (unstable.empty() ? "byte-identical" : "differ: " + which);
  return c;
}

inline CriterionResult criterion_imitation_ablation(std::uint64_t seed, AblationResult* out = nullptr) {
  using namespace acceptance_detail;
  const auto t0 = std::chrono::steady_clock::now();
  AblationResult r = run_ablation(seed);
  CriterionResult c = make_result(10, "imitation ablation");
  c.seconds = seconds_since(t0);
  int wide = 0;
  bool occluded = false;
  std::string rates;
  for (const auto& t : r.tasks) {
    const bool ok = t.row.delta() >= 0.20 - 1e-12;
    wide += ok ? 1 : 0;
    if (t.row.task == to_string(TaskKind::PushLatchOccluded)) occluded = ok;
    rates += (rates.empty() ? "" : "; ") + t.row.task + " " + fmt(t.row.rate_with(), 3) + " vs " +
             fmt(t.row.rate_without(), 3);
  }
  c.pass = wide >= 2 && occluded && c.seconds < 1800.0;
  c.detail = rates + " (need +0.20 on >= 2 tasks incl. latch-occluded, < 30 min)";
  if (out) *out = std::move(r);
  return c;
}

/// Runs the selected criteria in order; `on_result` sees each as it finishes.
inline std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& o) {
  std::vector<CriterionResult> out;
  auto run = [&](int id, const std::function<CriterionResult()>& f) {
    if (!o.only.empty() && !o.only.count(id)) return;
    CriterionResult r;
    try {
      r = f();
    } catch (const std::exception& e) {
      r.id = id;
      r.name = "criterion " + std::to_string(id);
      r.pass = false;
      r.detail = std::string("threw: ") + e.what();
    }
    if (o.on_result) o.on_result(r);
    out.push_back(std::move(r));
  };
  run(1, [&] { return criterion_position_tracking(o.seed); });
  run(2, [&] { return criterion_estimation(o.seed); });
  run(3, [&] { return criterion_matched_force_tracking(o.seed); });
  run(4, [&] { return criterion_force_sweep(o.seed); });
  run(5, [&] { return criterion_mode_properties(o.seed); });
  run(6, [&] { return criterion_base_compensation(o.seed); });
  run(7, [&] { return criterion_reward_golden(); });
  run(8, [&] { return criterion_gradient_checks(o.seed); });
  run(9, [&] { return criterion_determinism(o.seed, o.golden_episode); });
  run(10, [&] { return criterion_imitation_ablation(o.seed); });
  return out;
}

}  // namespace uniforce
