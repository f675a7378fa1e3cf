#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "uniforce/core.hpp"
#include "uniforce/mlp.hpp"
#include "uniforce/plant.hpp"
#include "uniforce/unified_control.hpp"

namespace uniforce {

inline constexpr std::size_t kHistoryLength = 32;
inline constexpr std::size_t kObservationDim = 31;
inline constexpr std::size_t kEstimateDim = 12;

/// Proprioceptive observation. q / q_dot are the EE position and velocity of
/// the Cartesian plant (standing in for joint states).
struct Observation {
  double t = 0.0;
  Vec3 g_base = Vec3(0.0, 0.0, -1.0);
  Vec3 omega_base = Vec3::Zero();
  Vec3 q = Vec3::Zero();
  Vec3 q_dot = Vec3::Zero();
  Vec3 a_prev = Vec3::Zero();
  CommandBundle c_cmd{};
  std::array<double, 4> theta_feet{};
};

/// Projected gravity of a base leaning against a planar push: the tilt tangent
/// along each axis is F / lean_stiffness.
inline Vec3 projected_gravity(const Vec3& base_force, double lean_stiffness) {
  const Vec3 g(base_force.x() / lean_stiffness, base_force.y() / lean_stiffness, -1.0);
  return g / g.norm();
}

inline Vec3 base_force_from_gravity(const Vec3& g_base, double lean_stiffness) {
  if (!(g_base.z() < 0.0)) return Vec3::Zero();
  return {-lean_stiffness * g_base.x() / g_base.z(), -lean_stiffness * g_base.y() / g_base.z(), 0.0};
}

inline Observation make_observation(const PlantState& s, const CommandBundle& cmds, const PlantParams& params) {
  Observation o;
  o.t = s.t;
  o.g_base = projected_gravity(s.base_force, params.base_lean_stiffness);
  o.omega_base = Vec3(0.0, 0.0, s.v_base.wz);
  o.q = s.x_ee;
  o.q_dot = s.v_ee;
  o.a_prev = s.action;
  o.c_cmd = cmds;
  o.theta_feet = feet_clock(s.t);
  return o;
}

/// Flat feature vector, fixed order (see README for the layout).
inline std::array<double, kObservationDim> observation_features(const Observation& o) {
  std::array<double, kObservationDim> f{};
  std::size_t k = 0;
  auto put3 = [&](const Vec3& v) {
    f[k++] = v.x();
    f[k++] = v.y();
    f[k++] = v.z();
  };
  put3(o.g_base);
  put3(o.omega_base);
  put3(o.q);
  put3(o.q_dot);
  put3(o.a_prev);
  f[k++] = o.c_cmd.v_base_cmd.vx;
  f[k++] = o.c_cmd.v_base_cmd.vy;
  f[k++] = o.c_cmd.v_base_cmd.wz;
  put3(o.c_cmd.x_ee_cmd);
  put3(o.c_cmd.F_ee_cmd);
  put3(o.c_cmd.F_base_cmd);
  for (double th : o.theta_feet) f[k++] = th;
  return f;
}

/// Normalisation bounds per observation feature (mapped onto [-1, 1]).
inline std::array<std::pair<double, double>, kObservationDim> observation_bounds() {
  std::array<std::pair<double, double>, kObservationDim> b{};
  std::size_t k = 0;
  auto put = [&](double lo, double hi, int n) {
    for (int i = 0; i < n; ++i) b[k++] = {lo, hi};
  };
  put(-1.0, 1.0, 3);    // g_base
  put(-1.0, 1.0, 3);    // omega_base
  put(-1.7, 1.7, 3);    // q
  put(-3.0, 3.0, 3);    // q_dot
  put(-1.0, 1.0, 3);    // a_prev
  b[k++] = {-0.8, 0.8}; // v cmd
  b[k++] = {-0.6, 0.6};
  b[k++] = {-0.8, 0.8};
  put(-0.85, 0.85, 3);  // x_ee cmd
  put(-60.0, 60.0, 3);  // F_ee cmd
  put(-60.0, 60.0, 3);  // F_base cmd
  put(0.0, 1.0, 4);     // feet clock
  return b;
}

struct EstimatorOutput {
  Vec3 F_hat_ee = Vec3::Zero();
  Vec3 F_hat_base = Vec3::Zero();
  Vec3 x_hat_ee = Vec3::Zero();
  BaseVelocity v_hat_base{};

  std::array<double, kEstimateDim> to_array() const {
    return {F_hat_ee.x(), F_hat_ee.y(), F_hat_ee.z(), F_hat_base.x(), F_hat_base.y(), F_hat_base.z(),
            x_hat_ee.x(), x_hat_ee.y(), x_hat_ee.z(), v_hat_base.vx, v_hat_base.vy, v_hat_base.wz};
  }

  static EstimatorOutput from_array(const std::array<double, kEstimateDim>& a) {
    EstimatorOutput o;
    o.F_hat_ee = Vec3(a[0], a[1], a[2]);
    o.F_hat_base = Vec3(a[3], a[4], a[5]);
    o.x_hat_ee = Vec3(a[6], a[7], a[8]);
    o.v_hat_base = {a[9], a[10], a[11]};
    return o;
  }
};

/// Output scaling used for training targets (value / scale).
inline std::array<double, kEstimateDim> estimate_scales() {
  return {120.0, 120.0, 120.0, 60.0, 60.0, 60.0, 1.7, 1.7, 1.7, 3.0, 3.0, 1.0};
}

/// Sanity clamp: forces limited to twice the 60 N command range.
inline constexpr double kForceSanityLimit = 120.0;

inline EstimatorOutput sanitize(EstimatorOutput o) {
  o.F_hat_ee = o.F_hat_ee.cwiseMax(-kForceSanityLimit).cwiseMin(kForceSanityLimit);
  o.F_hat_base = o.F_hat_base.cwiseMax(-kForceSanityLimit).cwiseMin(kForceSanityLimit);
  return o;
}

/// Ground-truth label for the state that ends a history window.
inline EstimatorOutput ground_truth(const PlantState& s) {
  EstimatorOutput o;
  o.F_hat_ee = s.net_force_ee;
  o.F_hat_base = s.base_force;
  o.x_hat_ee = s.x_ee;
  o.v_hat_base = s.v_base;
  return o;
}

/// Ring of the most recent observations, oldest first.
class HistoryBuffer {
 public:
  explicit HistoryBuffer(double dt = 0.02, std::size_t capacity = kHistoryLength) : dt_(dt), capacity_(capacity) {}

  void push(const Observation& obs) {
    if (!items_.empty()) {
      const double expected = items_.back().t + dt_;
      if (std::abs(obs.t - expected) > 1e-9 * std::max(1.0, std::abs(expected)))
        throw Error(ErrorCode::NonContiguous, "observation timestamps must advance by exactly dt");
    }
    items_.push_back(obs);
    if (items_.size() > capacity_) items_.pop_front();
  }

  void clear() { items_.clear(); }
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool full() const { return items_.size() == capacity_; }
  double dt() const { return dt_; }
  const Observation& operator[](std::size_t i) const { return items_[i]; }
  const Observation& back() const { return items_.back(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

 private:
  double dt_;
  std::size_t capacity_;
  std::deque<Observation> items_;
};

// ---------------------------------------------------------------------------
// JSON forms (shared with the episode format and the wire protocol)

inline nlohmann::json vec_to_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::SchemaMismatch, "expected a 3-vector");
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

inline nlohmann::json base_velocity_to_json(const BaseVelocity& v) { return nlohmann::json::array({v.vx, v.vy, v.wz}); }

inline BaseVelocity base_velocity_from_json(const nlohmann::json& j) {
  const Vec3 v = vec_from_json(j);
  return {v.x(), v.y(), v.z()};
}

inline nlohmann::json command_to_json(const CommandBundle& c) {
  return {{"v_base", base_velocity_to_json(c.v_base_cmd)},
          {"x_ee", vec_to_json(c.x_ee_cmd)},
          {"F_ee", vec_to_json(c.F_ee_cmd)},
          {"F_base", vec_to_json(c.F_base_cmd)}};
}

inline CommandBundle command_from_json(const nlohmann::json& j) {
  CommandBundle c;
  c.v_base_cmd = base_velocity_from_json(j.at("v_base"));
  c.x_ee_cmd = vec_from_json(j.at("x_ee"));
  c.F_ee_cmd = vec_from_json(j.at("F_ee"));
  c.F_base_cmd = vec_from_json(j.at("F_base"));
  const bool finite = c.x_ee_cmd.allFinite() && c.F_ee_cmd.allFinite() && c.F_base_cmd.allFinite() &&
                      std::isfinite(c.v_base_cmd.vx) && std::isfinite(c.v_base_cmd.vy) &&
                      std::isfinite(c.v_base_cmd.wz);
  if (!finite) throw Error(ErrorCode::MalformedMessage, "command values must be finite");
  return c;
}

inline nlohmann::json observation_to_json(const Observation& o) {
  return {{"t", o.t},
          {"g_base", vec_to_json(o.g_base)},
          {"omega_base", vec_to_json(o.omega_base)},
          {"q", vec_to_json(o.q)},
          {"q_dot", vec_to_json(o.q_dot)},
          {"a_prev", vec_to_json(o.a_prev)},
          {"c_cmd", command_to_json(o.c_cmd)},
          {"theta_feet", o.theta_feet}};
}

inline Observation observation_from_json(const nlohmann::json& j) {
  Observation o;
  o.t = j.at("t").get<double>();
  o.g_base = vec_from_json(j.at("g_base"));
  o.omega_base = vec_from_json(j.at("omega_base"));
  o.q = vec_from_json(j.at("q"));
  o.q_dot = vec_from_json(j.at("q_dot"));
  o.a_prev = vec_from_json(j.at("a_prev"));
  o.c_cmd = command_from_json(j.at("c_cmd"));
  o.theta_feet = j.at("theta_feet").get<std::array<double, 4>>();
  return o;
}

inline nlohmann::json estimate_to_json(const EstimatorOutput& e) {
  return {{"F_ee", vec_to_json(e.F_hat_ee)},
          {"F_base", vec_to_json(e.F_hat_base)},
          {"x_ee", vec_to_json(e.x_hat_ee)},
          {"v_base", base_velocity_to_json(e.v_hat_base)}};
}

inline EstimatorOutput estimate_from_json(const nlohmann::json& j) {
  EstimatorOutput e;
  e.F_hat_ee = vec_from_json(j.at("F_ee"));
  e.F_hat_base = vec_from_json(j.at("F_base"));
  e.x_hat_ee = vec_from_json(j.at("x_ee"));
  e.v_hat_base = base_velocity_from_json(j.at("v_base"));
  return e;
}

inline nlohmann::json history_to_json(const HistoryBuffer& h) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& o : h) items.push_back(observation_to_json(o));
  return {{"dt", h.dt()}, {"capacity", h.capacity()}, {"observations", items}};
}

inline HistoryBuffer history_from_json(const nlohmann::json& j) {
  HistoryBuffer h(j.at("dt").get<double>(), j.at("capacity").get<std::size_t>());
  for (const auto& o : j.at("observations")) h.push(observation_from_json(o));
  return h;
}

// ---------------------------------------------------------------------------
// Oracle

/// Model inversion: F = m_ee * dv/dt - F_actuator, with the actuator force
/// replayed from the recorded action and the previous state. Base force is
/// read back from the lean; base velocity is rolled forward through the
/// first-order base model across the window (approximate, exact only once
/// the window start transient has decayed).
inline EstimatorOutput oracle_estimate(const HistoryBuffer& history, const PlantParams& params,
                                       double impedance_D = ImpedanceParams{}.D) {
  if (history.size() < 2) throw Error(ErrorCode::InsufficientHistory, "oracle needs at least two observations");
  const Observation& cur = history[history.size() - 1];
  const Observation& prev = history[history.size() - 2];

  PlantState before;
  before.x_ee = prev.q;
  before.v_ee = prev.q_dot;
  const Vec3 target = action_to_target(cur.a_prev, params.action_scale, params.q_default);
  const Vec3 f_act = pd_actuator(target, before, params);
  const Vec3 accel = (cur.q_dot - prev.q_dot) / params.dt;

  EstimatorOutput out;
  out.F_hat_ee = params.mass_ee * accel - f_act;
  out.F_hat_base = base_force_from_gravity(cur.g_base, params.base_lean_stiffness);
  out.x_hat_ee = cur.q;

  const double alpha = params.dt / params.base_time_constant();
  BaseVelocity v{};
  bool first = true;
  for (const Observation& o : history) {
    const Vec3 f = base_force_from_gravity(o.g_base, params.base_lean_stiffness) + o.c_cmd.F_base_cmd;
    const BaseVelocity target_v{o.c_cmd.v_base_cmd.vx + f.x() / impedance_D, o.c_cmd.v_base_cmd.vy + f.y() / impedance_D,
                                o.c_cmd.v_base_cmd.wz};
    if (first) {
      v = target_v;
      first = false;
    } else {
      v.vx += alpha * (target_v.vx - v.vx);
      v.vy += alpha * (target_v.vy - v.vy);
    }
  }
  v.wz = cur.omega_base.z();
  out.v_hat_base = v;
  return sanitize(out);
}

// ---------------------------------------------------------------------------
// Learned estimator

/// Feed-forward regressor over a flattened observation window, with the
/// normalisation constants it was trained with.
class RegressorModel {
 public:
  RegressorModel() = default;

  /// Builds an untrained model. `input_lo/hi` map raw inputs onto [-1, 1];
  /// `output_scale` divides raw targets.
  RegressorModel(std::vector<int> hidden, Activation activation, std::vector<float> input_lo,
                 std::vector<float> input_hi, std::vector<float> output_scale, std::uint64_t seed,
                 bool linear_skip = false)
      : input_lo_(std::move(input_lo)), input_hi_(std::move(input_hi)), output_scale_(std::move(output_scale)) {
    if (input_lo_.size() != input_hi_.size() || input_lo_.empty() || output_scale_.empty())
      throw Error(ErrorCode::InvalidArgument, "inconsistent normalisation vectors");
    std::vector<int> sizes{static_cast<int>(input_lo_.size())};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(static_cast<int>(output_scale_.size()));
    Rng rng(seed);
    net_ = Mlp<float>(sizes, activation, rng, linear_skip);
  }

  int inputs() const { return net_.inputs(); }
  int outputs() const { return net_.outputs(); }
  const Mlp<float>& net() const { return net_; }
  Mlp<float>& net() { return net_; }

  /// Normalises raw inputs (column per sample).
  Mlp<float>::Mat normalize_inputs(const Mlp<float>::Mat& raw) const {
    Mlp<float>::Mat out(raw.rows(), raw.cols());
    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
      const float lo = input_lo_[i], hi = input_hi_[i];
      const float half = 0.5f * (hi - lo), mid = 0.5f * (hi + lo);
      out.row(i) = (raw.row(i).array() - mid) / half;
    }
    return out;
  }

  Mlp<float>::Mat normalize_targets(const Mlp<float>::Mat& raw) const {
    Mlp<float>::Mat out = raw;
    for (Eigen::Index i = 0; i < raw.rows(); ++i) out.row(i) /= output_scale_[i];
    return out;
  }

  /// Raw-space prediction for a batch of raw inputs.
  Mlp<float>::Mat predict_raw(const Mlp<float>::Mat& raw_inputs) const {
    Mlp<float>::Mat y = net_.forward(normalize_inputs(raw_inputs));
    for (Eigen::Index i = 0; i < y.rows(); ++i) y.row(i) *= output_scale_[i];
    return y;
  }

  const std::vector<float>& input_lo() const { return input_lo_; }
  const std::vector<float>& input_hi() const { return input_hi_; }
  const std::vector<float>& output_scale() const { return output_scale_; }

  // training state
  std::uint64_t steps = 0;
  double learning_rate = 1e-3;
  std::vector<double> loss_history;
  nlohmann::json metadata = nlohmann::json::object();

  bool operator==(const RegressorModel& o) const {
    return net_ == o.net_ && input_lo_ == o.input_lo_ && input_hi_ == o.input_hi_ && output_scale_ == o.output_scale_;
  }

  /// Adopts parameters/normalisation read from a model file.
  void assign(Mlp<float> net, std::vector<float> lo, std::vector<float> hi, std::vector<float> scale) {
    net_ = std::move(net);
    input_lo_ = std::move(lo);
    input_hi_ = std::move(hi);
    output_scale_ = std::move(scale);
  }

 private:
  Mlp<float> net_;
  std::vector<float> input_lo_, input_hi_, output_scale_;
};

/// Trains on normalised (input, target) batches drawn by `draw_batch`.
/// `draw_batch(rng, batch, X, T)` fills raw inputs and raw targets.
template <typename DrawBatch>
TrainingMonitor train_regressor(RegressorModel& model, DrawBatch&& draw_batch, const TrainOptions& opts) {
  Rng rng(opts.seed);
  TrainingMonitor monitor(opts);
  Mlp<float>::Gradients grads;
  Mlp<float>::Mat X, T;
  model.learning_rate = opts.lr;
  for (int step = 0; step < opts.steps; ++step) {
    draw_batch(rng, opts.batch, X, T);
    const float loss = model.net().loss_and_gradient(model.normalize_inputs(X), model.normalize_targets(T), grads);
    monitor.record(loss);
    model.net().sgd_step(grads, opts.lr, opts.momentum);
    model.loss_history.push_back(loss);
    ++model.steps;
  }
  return monitor;
}

/// Least-squares warm start: fits the skip path and output bias by ridge
/// regression on `samples` drawn windows, zeroes the MLP's output layer and
/// freezes the skip path, so SGD then trains the MLP on the residual.
template <typename DrawBatch>
void fit_linear_part(RegressorModel& model, DrawBatch&& draw_batch, int samples, double ridge, std::uint64_t seed) {
  if (!model.net().has_skip()) throw Error(ErrorCode::InvalidArgument, "model has no linear skip path");
  if (samples <= 0) throw Error(ErrorCode::EmptyDataset, "least-squares fit needs samples");
  const Eigen::Index n_in = model.inputs(), n_out = model.outputs();
  const Eigen::Index D = n_in + 1;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(D, D);
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(D, n_out);
  Rng rng(seed);
  Mlp<float>::Mat X, T;
  const int chunk = 512;
  for (int done = 0; done < samples; done += chunk) {
    const int b = std::min(chunk, samples - done);
    draw_batch(rng, b, X, T);
    Eigen::MatrixXd Xn(D, b);
    Xn.topRows(n_in) = model.normalize_inputs(X).cast<double>();
    Xn.row(n_in).setOnes();
    A.selfadjointView<Eigen::Lower>().rankUpdate(Xn);
    B.noalias() += Xn * model.normalize_targets(T).cast<double>().transpose();
  }
  A.triangularView<Eigen::StrictlyUpper>() = A.transpose();
  A.diagonal().array() += ridge * static_cast<double>(samples);
  const Eigen::MatrixXd W = A.ldlt().solve(B);  // D x n_out
  model.net().zero_output_layer();
  model.net().set_linear_part(W.topRows(n_in).transpose().cast<float>(), W.row(n_in).transpose().cast<float>());
  model.net().freeze_skip(true);
  model.net().reset_momentum();
}

/// Window of observations (oldest first) flattened into one raw input column.
inline void flatten_window(const std::vector<Observation>& obs, std::size_t end_index, std::size_t window,
                           Eigen::Ref<Eigen::VectorXf> out) {
  const std::size_t first = end_index + 1 - window;
  std::size_t k = 0;
  for (std::size_t i = first; i <= end_index; ++i) {
    const auto f = observation_features(obs[i]);
    for (double v : f) out[k++] = static_cast<float>(v);
  }
}

/// Estimator network: MLP plus a linear skip path from the normalised window.
inline RegressorModel make_estimator_model(std::vector<int> hidden = {128, 128}, Activation act = Activation::Relu,
                                           std::uint64_t seed = 0, bool linear_skip = true) {
  const auto bounds = observation_bounds();
  std::vector<float> lo, hi;
  for (std::size_t h = 0; h < kHistoryLength; ++h)
    for (const auto& [l, u] : bounds) {
      lo.push_back(static_cast<float>(l));
      hi.push_back(static_cast<float>(u));
    }
  std::vector<float> scale;
  for (double s : estimate_scales()) scale.push_back(static_cast<float>(s));
  RegressorModel m(std::move(hidden), act, std::move(lo), std::move(hi), std::move(scale), seed, linear_skip);
  m.metadata = {{"kind", "estimator"}, {"history", kHistoryLength}, {"obs_dim", kObservationDim}};
  return m;
}

inline EstimatorOutput predict(const RegressorModel& model, const HistoryBuffer& history) {
  if (history.size() < kHistoryLength)
    throw Error(ErrorCode::InsufficientHistory, "learned estimator needs a full history window");
  if (model.inputs() != static_cast<int>(kHistoryLength * kObservationDim))
    throw Error(ErrorCode::SchemaMismatch, "model input size does not match the observation window");
  std::vector<Observation> window(history.begin(), history.end());
  Mlp<float>::Mat x(model.inputs(), 1);
  flatten_window(window, window.size() - 1, kHistoryLength, x.col(0));
  const Mlp<float>::Mat y = model.predict_raw(x);
  std::array<double, kEstimateDim> a{};
  for (std::size_t i = 0; i < kEstimateDim; ++i) a[i] = y(static_cast<Eigen::Index>(i), 0);
  return sanitize(EstimatorOutput::from_array(a));
}

// ---------------------------------------------------------------------------
// Model file
//
// Layout (all integers u32 little-endian, all reals f32 little-endian):
//   "UFNN" | version | metadata_len | metadata JSON (utf-8)
//   | input_lo[n_in] | input_hi[n_in] | output_scale[n_out]
//   | per layer: W (rows*cols, column-major) then b (rows)
//   | skip matrix S (outputs*inputs, column-major) when "linear_skip" is true
// The metadata JSON carries "sizes", "activation", "linear_skip", "steps",
// "learning_rate" plus model-specific keys.

inline constexpr std::uint32_t kModelFormatVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  explicit Reader(const std::string& data) : data_(data) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw Error(ErrorCode::SchemaMismatch, "model file truncated");
  }

  const std::string& data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_model(const RegressorModel& model) {
  nlohmann::json meta = model.metadata;
  meta["sizes"] = model.net().sizes();
  meta["activation"] = to_string(model.net().activation());
  meta["linear_skip"] = model.net().has_skip();
  meta["steps"] = model.steps;
  meta["learning_rate"] = model.learning_rate;
  const std::string meta_text = meta.dump();

  std::string out = "UFNN";
  detail::put_u32(out, kModelFormatVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(meta_text.size()));
  out += meta_text;
  for (float v : model.input_lo()) detail::put_f32(out, v);
  for (float v : model.input_hi()) detail::put_f32(out, v);
  for (float v : model.output_scale()) detail::put_f32(out, v);
  for (float v : model.net().flat_parameters()) detail::put_f32(out, v);
  return out;
}

inline RegressorModel deserialize_model(const std::string& data) {
  detail::Reader r(data);
  if (r.bytes(4) != "UFNN") throw Error(ErrorCode::SchemaMismatch, "not a model file");
  const std::uint32_t version = r.u32();
  if (version != kModelFormatVersion)
    throw Error(ErrorCode::SchemaMismatch, "unsupported model format version " + std::to_string(version));
  const std::uint32_t meta_len = r.u32();
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.bytes(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, std::string("model metadata: ") + e.what());
  }
  const auto sizes = meta.at("sizes").get<std::vector<int>>();
  if (sizes.size() < 2) throw Error(ErrorCode::SchemaMismatch, "model needs at least two layer sizes");
  const Activation act = activation_from_string(meta.at("activation").get<std::string>());
  std::vector<float> lo(sizes.front()), hi(sizes.front()), scale(sizes.back());
  for (auto& v : lo) v = r.f32();
  for (auto& v : hi) v = r.f32();
  for (auto& v : scale) v = r.f32();
  Rng dummy(0);
  Mlp<float> net(sizes, act, dummy, meta.value("linear_skip", false));
  std::vector<float> flat(net.parameter_count());
  for (auto& v : flat) v = r.f32();
  if (!r.done()) throw Error(ErrorCode::SchemaMismatch, "trailing bytes in model file");
  net.set_flat_parameters(flat);

  RegressorModel model;
  model.assign(std::move(net), std::move(lo), std::move(hi), std::move(scale));
  model.steps = meta.value("steps", std::uint64_t{0});
  model.learning_rate = meta.value("learning_rate", 1e-3);
  meta.erase("sizes");
  meta.erase("activation");
  meta.erase("linear_skip");
  meta.erase("steps");
  meta.erase("learning_rate");
  model.metadata = meta;
  return model;
}

inline void save_model(const RegressorModel& model, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::StorageFull, "cannot open " + path + " for writing");
  const std::string data = serialize_model(model);
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!f) throw Error(ErrorCode::StorageFull, "short write to " + path);
}

inline RegressorModel load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::InvalidArgument, "cannot open model file " + path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_model(data);
}

// ---------------------------------------------------------------------------
// Closed-loop estimator handle

/// Estimate source used inside control loops.
class ForceEstimator {
 public:
  virtual ~ForceEstimator() = default;
  /// Returns a zero estimate until enough history is available.
  virtual EstimatorOutput estimate(const HistoryBuffer& history) const = 0;
  virtual std::string kind() const = 0;
};

class OracleEstimator final : public ForceEstimator {
 public:
  explicit OracleEstimator(PlantParams params, double impedance_D = ImpedanceParams{}.D)
      : params_(params), D_(impedance_D) {}

  EstimatorOutput estimate(const HistoryBuffer& history) const override {
    if (history.size() < 2) {
      EstimatorOutput zero;
      if (history.size() == 1) zero.x_hat_ee = history.back().q;
      return zero;
    }
    return oracle_estimate(history, params_, D_);
  }

  std::string kind() const override { return "oracle"; }

 private:
  PlantParams params_;
  double D_;
};

class LearnedEstimator final : public ForceEstimator {
 public:
  explicit LearnedEstimator(std::shared_ptr<const RegressorModel> model) : model_(std::move(model)) {}

  EstimatorOutput estimate(const HistoryBuffer& history) const override {
    if (history.size() < kHistoryLength) {
      EstimatorOutput zero;
      if (history.size() > 0) zero.x_hat_ee = history.back().q;
      return zero;
    }
    return predict(*model_, history);
  }

  std::string kind() const override { return "learned"; }

 private:
  std::shared_ptr<const RegressorModel> model_;
};

}  // namespace uniforce
