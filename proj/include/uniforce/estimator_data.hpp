#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "uniforce/estimator.hpp"
#include "uniforce/scheduler.hpp"
#include "uniforce/session.hpp"

namespace uniforce {

/// One simulated rollout: observations and the matching ground-truth labels.
struct EpisodeTrace {
  std::uint64_t seed = 0;
  std::vector<Observation> obs;
  std::vector<EstimatorOutput> labels;
  std::vector<EstimatorOutput> oracle;  // oracle output per index (empty before 2 observations)
};

struct TraceOptions {
  int steps = 400;
  bool randomize = true;
  double command_period = 2.0;  // s between command resamples
};

inline constexpr std::uint64_t kSaltScenario = 10;

/// Scheduler-excited rollout with a seed-chosen scenario: free space with EE
/// and base disturbances, force control against a wall, or a carried payload.
inline EpisodeTrace generate_trace(std::uint64_t seed, const TraceOptions& opts = {}, const PlantParams& nominal = {}) {
  Rng rng(derive_seed(seed, kSaltScenario));
  const double u = rng.uniform();
  SceneSpec scene;
  scene.randomize = opts.randomize;
  enum { Free, WallContact, Carry } kind = u < 0.45 ? Free : (u < 0.8 ? WallContact : Carry);
  double wall_x = 0.0;
  switch (kind) {
    case Free:
      scene.disturbance.ee = true;
      scene.disturbance.base = true;
      break;
    case WallContact: {
      Wall w;
      wall_x = rng.uniform(0.5, 0.7);
      w.point = Vec3(wall_x, 0.0, 0.0);
      scene.env = w;
      scene.disturbance.base = true;
      scene.x_home = Vec3(wall_x - 0.1, 0.0, 0.0);
      break;
    }
    case Carry:
      scene.env = Payload{rng.uniform(0.5, 3.0)};
      scene.disturbance.base = true;
      break;
  }
  Session session(scene, seed, nominal);
  const CommandRanges ranges;
  const int period = std::max(1, static_cast<int>(std::lround(opts.command_period / nominal.dt)));

  EpisodeTrace trace;
  trace.seed = seed;
  trace.obs.push_back(session.history().back());
  trace.labels.push_back(ground_truth(session.state()));
  trace.oracle.emplace_back();

  ControlMode mode = ControlMode::position();
  CommandBundle cmds;
  cmds.x_ee_cmd = scene.x_home;
  for (int k = 0; k < opts.steps; ++k) {
    if (k % period == 0) {
      CommandBundle c = sample_commands(rng, ranges);
      switch (kind) {
        case Free:
          mode = rng.uniform() < 0.5 ? ControlMode::position() : ControlMode::impedance();
          c.F_ee_cmd.setZero();
          break;
        case WallContact:
          mode = ControlMode::force();
          c.x_ee_cmd = Vec3(wall_x - rng.uniform(0.0, 0.08), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2));
          c.F_ee_cmd = Vec3(rng.uniform(0.0, 60.0), 0.0, 0.0);
          break;
        case Carry: {
          mode = ControlMode::force();
          const double m = payload_mass(session.environment(), session.params());
          c.F_ee_cmd = Vec3(0.0, 0.0, m * kGravity + rng.uniform(-10.0, 10.0));
          break;
        }
      }
      if (rng.uniform() < 0.5) c.F_base_cmd.setZero();
      cmds = c;
    }
    const auto tick = session.advance(mode, cmds);
    trace.obs.push_back(tick.obs);
    trace.labels.push_back(ground_truth(tick.state));
    trace.oracle.push_back(oracle_estimate(session.history(), session.params(), session.controller_config().impedance.D));
  }
  return trace;
}

inline std::vector<EpisodeTrace> generate_traces(std::uint64_t first_seed, int episodes, const TraceOptions& opts = {},
                                                 const PlantParams& nominal = {}) {
  std::vector<EpisodeTrace> out;
  out.reserve(static_cast<std::size_t>(episodes));
  for (int e = 0; e < episodes; ++e) out.push_back(generate_trace(first_seed + static_cast<std::uint64_t>(e), opts, nominal));
  return out;
}

/// Fills a batch of (flattened window, label) columns drawn uniformly over
/// all full windows of the traces.
class WindowSampler {
 public:
  explicit WindowSampler(const std::vector<EpisodeTrace>& traces) : traces_(traces) {
    for (std::size_t e = 0; e < traces_.size(); ++e)
      if (traces_[e].obs.size() >= kHistoryLength) {
        eligible_.push_back(e);
        total_ += traces_[e].obs.size() - kHistoryLength + 1;
      }
    if (eligible_.empty()) throw Error(ErrorCode::EmptyDataset, "no trace holds a full history window");
  }

  std::size_t windows() const { return total_; }

  void operator()(Rng& rng, int batch, Mlp<float>::Mat& X, Mlp<float>::Mat& T) const {
    X.resize(static_cast<Eigen::Index>(kHistoryLength * kObservationDim), batch);
    T.resize(static_cast<Eigen::Index>(kEstimateDim), batch);
    for (int b = 0; b < batch; ++b) {
      const auto& tr = traces_[eligible_[rng.index(eligible_.size())]];
      const std::size_t end = kHistoryLength - 1 + rng.index(tr.obs.size() - kHistoryLength + 1);
      fill(tr, end, X.col(b), T.col(b));
    }
  }

  static void fill(const EpisodeTrace& tr, std::size_t end, Eigen::Ref<Eigen::VectorXf> x,
                   Eigen::Ref<Eigen::VectorXf> t) {
    flatten_window(tr.obs, end, kHistoryLength, x);
    const auto label = tr.labels[end].to_array();
    for (std::size_t i = 0; i < kEstimateDim; ++i) t[static_cast<Eigen::Index>(i)] = static_cast<float>(label[i]);
  }

 private:
  const std::vector<EpisodeTrace>& traces_;
  std::vector<std::size_t> eligible_;
  std::size_t total_ = 0;
};

inline TrainingMonitor train_estimator(RegressorModel& model, const std::vector<EpisodeTrace>& traces,
                                       const TrainOptions& opts) {
  WindowSampler sampler(traces);
  return train_regressor(model, sampler, opts);
}

// ---------------------------------------------------------------------------
// Evaluation

struct AxisStats {
  double sum_sq = 0.0;
  double max_abs = 0.0;
  std::size_t n = 0;

  void add(double err) {
    sum_sq += err * err;
    max_abs = std::max(max_abs, std::abs(err));
    ++n;
  }
  double rms() const { return n ? std::sqrt(sum_sq / static_cast<double>(n)) : 0.0; }
};

/// Pearson correlation accumulated online.
struct Correlation {
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  std::size_t n = 0;

  void add(double x, double y) {
    sx += x;
    sy += y;
    sxx += x * x;
    syy += y * y;
    sxy += x * y;
    ++n;
  }
  double r() const {
    const double nn = static_cast<double>(n);
    const double cov = sxy - sx * sy / nn;
    const double vx = sxx - sx * sx / nn, vy = syy - sy * sy / nn;
    if (vx <= 0.0 || vy <= 0.0) return 0.0;
    return cov / std::sqrt(vx * vy);
  }
};

inline constexpr int kForceBinCount = 13;  // -60, -50, ..., 60 N

inline int force_bin(double f) {
  const int b = static_cast<int>(std::lround(f / 10.0));
  return std::clamp(b, -6, 6) + 6;
}

struct EstimatorReport {
  std::array<AxisStats, 3> F_ee{};
  std::array<AxisStats, 3> x_ee{};
  std::array<AxisStats, 3> v_base{};
  std::array<Correlation, 3> vs_oracle{};  // per-axis F_ee correlation with the oracle
  std::array<std::array<AxisStats, kForceBinCount>, 3> F_bins{};
  std::size_t samples = 0;

  void add(const EstimatorOutput& pred, const EstimatorOutput& truth, const EstimatorOutput* oracle) {
    for (int a = 0; a < 3; ++a) {
      const double fe = pred.F_hat_ee[a] - truth.F_hat_ee[a];
      F_ee[a].add(fe);
      x_ee[a].add(pred.x_hat_ee[a] - truth.x_hat_ee[a]);
      F_bins[a][force_bin(truth.F_hat_ee[a])].add(fe);
      if (oracle) vs_oracle[a].add(pred.F_hat_ee[a], oracle->F_hat_ee[a]);
    }
    v_base[0].add(pred.v_hat_base.vx - truth.v_hat_base.vx);
    v_base[1].add(pred.v_hat_base.vy - truth.v_hat_base.vy);
    v_base[2].add(pred.v_hat_base.wz - truth.v_hat_base.wz);
    ++samples;
  }

  double max_force_rms() const { return std::max({F_ee[0].rms(), F_ee[1].rms(), F_ee[2].rms()}); }
  double max_position_rms() const { return std::max({x_ee[0].rms(), x_ee[1].rms(), x_ee[2].rms()}); }

  /// Two sections: per-quantity summary rows, then force-bin rows.
  std::string to_csv() const {
    std::ostringstream os;
    os << std::setprecision(9);
    os << "quantity,axis,rms,max_abs,samples\n";
    const char* axes[3] = {"x", "y", "z"};
    const char* base_axes[3] = {"vx", "vy", "wz"};
    for (int a = 0; a < 3; ++a) os << "F_ee," << axes[a] << ',' << F_ee[a].rms() << ',' << F_ee[a].max_abs << ',' << F_ee[a].n << '\n';
    for (int a = 0; a < 3; ++a) os << "x_ee," << axes[a] << ',' << x_ee[a].rms() << ',' << x_ee[a].max_abs << ',' << x_ee[a].n << '\n';
    for (int a = 0; a < 3; ++a)
      os << "v_base," << base_axes[a] << ',' << v_base[a].rms() << ',' << v_base[a].max_abs << ',' << v_base[a].n << '\n';
    os << "\nforce_bin_N,axis,rms,max_abs,samples\n";
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < kForceBinCount; ++b) {
        const auto& s = F_bins[a][b];
        os << (b - 6) * 10 << ',' << axes[a] << ',' << s.rms() << ',' << s.max_abs << ',' << s.n << '\n';
      }
    return os.str();
  }
};

/// Evaluates an estimator over every full window of the traces.
inline EstimatorReport evaluate(const ForceEstimator& estimator, const std::vector<EpisodeTrace>& traces,
                                double dt = PlantParams{}.dt) {
  EstimatorReport report;
  for (const auto& tr : traces) {
    HistoryBuffer h(dt);
    for (std::size_t i = 0; i < tr.obs.size(); ++i) {
      h.push(tr.obs[i]);
      if (i + 1 < kHistoryLength) continue;
      const EstimatorOutput pred = estimator.estimate(h);
      report.add(pred, tr.labels[i], tr.oracle.empty() ? nullptr : &tr.oracle[i]);
    }
  }
  return report;
}

/// Oracle outputs recorded in the traces, scored against the labels.
inline EstimatorReport evaluate_recorded_oracle(const std::vector<EpisodeTrace>& traces) {
  EstimatorReport report;
  for (const auto& tr : traces)
    for (std::size_t i = kHistoryLength - 1; i < tr.obs.size(); ++i) report.add(tr.oracle[i], tr.labels[i], &tr.oracle[i]);
  return report;
}

// ---------------------------------------------------------------------------
// Pipeline

inline constexpr std::uint64_t kSaltEstimatorTrainSet = 40;
inline constexpr std::uint64_t kSaltEstimatorEvalSet = 41;
inline constexpr std::uint64_t kSaltEstimatorInit = 42;
inline constexpr std::uint64_t kSaltEstimatorFit = 43;
inline constexpr std::uint64_t kSaltEstimatorSgd = 44;

struct EstimatorPipelineOptions {
  int train_episodes = 200;
  int eval_episodes = 40;
  TraceOptions trace{};
  std::vector<int> hidden{128, 128};
  int fit_samples = 40000;
  double ridge = 1e-8;
  int steps = 20000;
  int batch = 64;
  double lr = 1e-3;
  PlantParams nominal{};
};

struct EstimatorPipelineResult {
  RegressorModel model;
  EstimatorReport learned;
  EstimatorReport oracle;
  double seconds = 0.0;
};

/// Generates training and held-out traces, warm-starts the linear part,
/// trains the MLP on the residual and scores learned and oracle estimators.
inline EstimatorPipelineResult run_estimator_pipeline(std::uint64_t seed, const EstimatorPipelineOptions& o = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto train = generate_traces(derive_seed(seed, kSaltEstimatorTrainSet), o.train_episodes, o.trace, o.nominal);
  const auto eval = generate_traces(derive_seed(seed, kSaltEstimatorEvalSet), o.eval_episodes, o.trace, o.nominal);
  EstimatorPipelineResult r;
  r.model = make_estimator_model(o.hidden, Activation::Relu, derive_seed(seed, kSaltEstimatorInit));
  WindowSampler sampler(train);
  fit_linear_part(r.model, sampler, o.fit_samples, o.ridge, derive_seed(seed, kSaltEstimatorFit));
  TrainOptions t;
  t.steps = o.steps;
  t.batch = o.batch;
  t.lr = o.lr;
  t.seed = derive_seed(seed, kSaltEstimatorSgd);
  train_estimator(r.model, train, t);
  r.model.metadata["seed"] = seed;
  r.model.metadata["train_episodes"] = o.train_episodes;
  LearnedEstimator learned(std::make_shared<RegressorModel>(r.model));
  r.learned = evaluate(learned, eval, o.nominal.dt);
  r.oracle = evaluate_recorded_oracle(eval);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace uniforce
