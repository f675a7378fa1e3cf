#include <gtest/gtest.h>

#include "uniforce/estimator_data.hpp"

using namespace uniforce;

namespace {

Observation obs_at(double t, const Vec3& q, const Vec3& q_dot, const Vec3& target, const PlantParams& p = {}) {
  Observation o;
  o.t = t;
  o.q = q;
  o.q_dot = q_dot;
  o.a_prev = target_to_action(target, p.action_scale, p.q_default);
  return o;
}

HistoryBuffer static_history(const Vec3& q, const Vec3& target, int n = 4) {
  HistoryBuffer h;
  for (int i = 0; i < n; ++i) h.push(obs_at(i * h.dt(), q, Vec3::Zero(), target));
  return h;
}

// Central finite differences on the flat parameter vector; relative error of
// the whole gradient.
double finite_difference_error(Mlp<double> net, const Mlp<double>::Mat& X, const Mlp<double>::Mat& T) {
  Mlp<double>::Gradients g;
  net.loss_and_gradient(X, T, g);
  const std::vector<double> analytic = Mlp<double>::flatten(g);
  std::vector<double> theta = net.flat_parameters();
  EXPECT_EQ(theta.size(), analytic.size());
  const double h = 1e-6;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double keep = theta[i];
    theta[i] = keep + h;
    net.set_flat_parameters(theta);
    const double up = net.loss(X, T);
    theta[i] = keep - h;
    net.set_flat_parameters(theta);
    const double down = net.loss(X, T);
    theta[i] = keep;
    const double fd = (up - down) / (2 * h);
    num += (fd - analytic[i]) * (fd - analytic[i]);
    den += fd * fd;
  }
  return std::sqrt(num / std::max(den, 1e-300));
}

Mlp<double>::Mat random_matrix(Rng& rng, int rows, int cols) {
  Mlp<double>::Mat m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = rng.uniform(-1, 1);
  return m;
}

std::vector<EpisodeTrace> small_traces(std::uint64_t seed, int n, bool randomize = false) {
  TraceOptions o;
  o.steps = 120;
  o.randomize = randomize;
  return generate_traces(seed, n, o);
}

}  // namespace

TEST(HistoryBuffer, KeepsNewestThirtyTwo) {
  HistoryBuffer h;
  for (int i = 0; i < 33; ++i) h.push(obs_at(i * 0.02, Vec3(i, 0, 0), Vec3::Zero(), Vec3::Zero()));
  EXPECT_EQ(h.size(), 32u);
  EXPECT_TRUE(h.full());
  EXPECT_EQ(h[0].q.x(), 1.0);
  EXPECT_EQ(h.back().q.x(), 32.0);
}

TEST(HistoryBuffer, RejectsGaps) {
  HistoryBuffer h;
  h.push(obs_at(0.0, Vec3::Zero(), Vec3::Zero(), Vec3::Zero()));
  try {
    h.push(obs_at(0.04, Vec3::Zero(), Vec3::Zero(), Vec3::Zero()));
    FAIL() << "expected NonContiguous";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonContiguous);
  }
}

TEST(Observation, FeatureLayout) {
  Observation o;
  o.q = Vec3(1, 2, 3);
  o.c_cmd.F_base_cmd = Vec3(7, 8, 9);
  o.theta_feet = {0.1, 0.2, 0.3, 0.4};
  const auto f = observation_features(o);
  EXPECT_EQ(f[6], 1.0);
  EXPECT_EQ(f[8], 3.0);
  EXPECT_EQ(f[24], 7.0);
  EXPECT_EQ(f[30], 0.4);
  EXPECT_EQ(f.size(), kObservationDim);
}

TEST(Observation, ProjectedGravityRoundTrip) {
  const Vec3 f(30, -12, 0);
  EXPECT_TRUE(base_force_from_gravity(projected_gravity(f, 600.0), 600.0).isApprox(f, 1e-12));
  EXPECT_NEAR(projected_gravity(f, 600.0).norm(), 1.0, 1e-15);
}

TEST(Oracle, RestInFreeSpace) {
  const Vec3 q(0.5, 0.0, 0.2);
  const EstimatorOutput e = oracle_estimate(static_history(q, q), PlantParams{});
  EXPECT_LT(e.F_hat_ee.norm(), 1e-9);
  EXPECT_EQ(e.x_hat_ee, q);
}

TEST(Oracle, StaticWallLean) {
  PlantParams p;
  const Vec3 q(0.6, 0.0, 0.0);
  // actuator pushes +30 N with zero acceleration: the environment pushes back
  const EstimatorOutput e = oracle_estimate(static_history(q, q + Vec3(30.0 / p.pd_kp, 0, 0)), p);
  EXPECT_LT((e.F_hat_ee - Vec3(-30, 0, 0)).norm(), 0.1);
}

TEST(Oracle, HangingPayload) {
  PlantParams p;
  const Vec3 q(0.5, 0.0, 0.0);
  const double support = 2.5 * kGravity;
  const EstimatorOutput e = oracle_estimate(static_history(q, q + Vec3(0, 0, support / p.pd_kp)), p);
  EXPECT_NEAR(e.F_hat_ee.z(), -24.525, 1e-9);
  EXPECT_LT(std::abs(e.F_hat_ee.x()) + std::abs(e.F_hat_ee.y()), 1e-9);
}

TEST(Oracle, NeedsTwoObservations) {
  HistoryBuffer h;
  EXPECT_THROW(oracle_estimate(h, PlantParams{}), Error);
  h.push(Observation{});
  try {
    oracle_estimate(h, PlantParams{});
    FAIL() << "expected InsufficientHistory";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientHistory);
  }
  EXPECT_EQ(OracleEstimator(PlantParams{}).estimate(h).F_hat_ee, Vec3::Zero());
}

TEST(Oracle, ExactOnNoiselessRollouts) {
  const EstimatorReport r = evaluate_recorded_oracle(small_traces(100, 6));
  EXPECT_GT(r.samples, 0u);
  EXPECT_LT(r.max_force_rms(), 0.1);
}

TEST(Oracle, ExactOnRandomizedRollouts) {
  const EstimatorReport r = evaluate_recorded_oracle(small_traces(200, 6, true));
  EXPECT_LT(r.max_force_rms(), 0.1);
}

TEST(Sanitize, ClampsForces) {
  EstimatorOutput o;
  o.F_hat_ee = Vec3(500, -500, 3);
  o.F_hat_base = Vec3(0, 1000, 0);
  const EstimatorOutput s = sanitize(o);
  EXPECT_EQ(s.F_hat_ee, Vec3(kForceSanityLimit, -kForceSanityLimit, 3));
  EXPECT_EQ(s.F_hat_base.y(), kForceSanityLimit);
}

TEST(LearnedModel, PredictNeedsFullHistory) {
  const RegressorModel m = make_estimator_model({8});
  HistoryBuffer h;
  try {
    predict(m, h);
    FAIL() << "expected InsufficientHistory";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientHistory);
  }
}

TEST(LearnedModel, SerializeRoundTrip) {
  RegressorModel m = make_estimator_model({16, 8}, Activation::Tanh, 3);
  const auto traces = small_traces(1, 2);
  WindowSampler sampler(traces);
  fit_linear_part(m, sampler, 512, 1e-6, 5);
  TrainOptions t;
  t.steps = 20;
  train_estimator(m, traces, t);
  const RegressorModel back = deserialize_model(serialize_model(m));
  EXPECT_TRUE(back == m);
  EXPECT_EQ(serialize_model(back), serialize_model(m));

  HistoryBuffer h;
  for (const auto& o : traces[0].obs) h.push(o);
  const auto a = predict(m, h).to_array(), b = predict(back, h).to_array();
  EXPECT_EQ(a, b);
}

TEST(LearnedModel, RejectsForeignBytes) {
  try {
    deserialize_model("not a model");
    FAIL() << "expected SchemaMismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SchemaMismatch);
  }
  std::string bytes = serialize_model(make_estimator_model({4}));
  bytes.pop_back();
  EXPECT_THROW(deserialize_model(bytes), Error);
}

TEST(LearnedModel, BatchOfOneMatchesSinglePath) {
  const RegressorModel m = make_estimator_model({16}, Activation::Relu, 8);
  const auto traces = small_traces(3, 1);
  HistoryBuffer h;
  for (const auto& o : traces[0].obs) h.push(o);
  Mlp<float>::Mat X(m.inputs(), 1);
  Eigen::VectorXf label(kEstimateDim);
  WindowSampler::fill(traces[0], traces[0].obs.size() - 1, X.col(0), label);
  const Mlp<float>::Mat y = m.predict_raw(X);
  std::array<double, kEstimateDim> raw{};
  for (std::size_t i = 0; i < kEstimateDim; ++i) raw[i] = y(static_cast<Eigen::Index>(i), 0);
  EXPECT_EQ(sanitize(EstimatorOutput::from_array(raw)).to_array(), predict(m, h).to_array());
}

TEST(LearnedModel, UntrainedStaysWithinSanityClamp) {
  const auto traces = small_traces(4, 2);
  const auto m = std::make_shared<RegressorModel>(make_estimator_model({32}, Activation::Relu, 1));
  const LearnedEstimator est(m);
  for (const auto& tr : traces) {
    HistoryBuffer h;
    for (const auto& o : tr.obs) {
      h.push(o);
      const EstimatorOutput e = est.estimate(h);
      ASSERT_TRUE(e.F_hat_ee.allFinite());
      ASSERT_LE(e.F_hat_ee.cwiseAbs().maxCoeff(), kForceSanityLimit);
    }
  }
}

TEST(Mlp, GradientMatchesFiniteDifferences) {
  Rng rng(21);
  for (Activation act : {Activation::Tanh, Activation::Relu}) {
    for (bool skip : {false, true}) {
      Mlp<double> net({5, 7, 6, 3}, act, rng, skip);
      if (skip) {
        // non-zero skip so its gradient is exercised away from the origin
        auto flat = net.flat_parameters();
        for (auto& v : flat) v += rng.uniform(-0.1, 0.1);
        net.set_flat_parameters(flat);
      }
      const auto X = random_matrix(rng, 5, 9), T = random_matrix(rng, 3, 9);
      EXPECT_LT(finite_difference_error(net, X, T), 1e-4) << to_string(act) << " skip " << skip;
    }
  }
}

TEST(Mlp, FrozenSkipDoesNotMove) {
  Rng rng(2);
  Mlp<float> net({3, 4, 2}, Activation::Tanh, rng, true);
  Mlp<float>::Mat S = Mlp<float>::Mat::Constant(2, 3, 0.5f);
  net.set_linear_part(S, Mlp<float>::Vec::Zero(2));
  net.freeze_skip(true);
  Mlp<float>::Mat X = Mlp<float>::Mat::Random(3, 8), T = Mlp<float>::Mat::Random(2, 8);
  Mlp<float>::Gradients g;
  for (int i = 0; i < 50; ++i) {
    net.loss_and_gradient(X, T, g);
    net.sgd_step(g, 0.05, 0.9);
  }
  EXPECT_EQ(net.skip(), S);
}

TEST(Mlp, ParameterCountFixed) {
  Rng rng(1);
  Mlp<float> net({4, 5, 2}, Activation::Relu, rng, true);
  EXPECT_EQ(net.parameter_count(), 4u * 5 + 5 + 5 * 2 + 2 + 2 * 4);
  const std::size_t n = net.parameter_count();
  Mlp<float>::Mat X = Mlp<float>::Mat::Random(4, 4), T = Mlp<float>::Mat::Random(2, 4);
  Mlp<float>::Gradients g;
  net.loss_and_gradient(X, T, g);
  net.sgd_step(g, 0.01, 0.9);
  EXPECT_EQ(net.parameter_count(), n);
  EXPECT_THROW(Mlp<float>({4}, Activation::Relu, rng), Error);
}

TEST(Training, MemorizesSingleSample) {
  RegressorModel m({16, 16}, Activation::Tanh, {-1, -1, -1, -1}, {1, 1, 1, 1}, {1, 1}, 4);
  Mlp<float>::Mat x(4, 1), t(2, 1);
  x << 0.3f, -0.2f, 0.7f, 0.1f;
  t << 0.5f, -0.25f;
  auto draw = [&](Rng&, int batch, Mlp<float>::Mat& X, Mlp<float>::Mat& T) {
    X = x.replicate(1, batch);
    T = t.replicate(1, batch);
  };
  TrainOptions o;
  o.steps = 2000;
  o.batch = 1;
  o.lr = 1e-2;
  const TrainingMonitor mon = train_regressor(m, draw, o);
  EXPECT_LT(mon.history().back(), 1e-6);
  EXPECT_LT((m.predict_raw(x) - t).norm(), 1e-3);
}

TEST(Training, BlockMeanLossNonIncreasing) {
  const auto traces = small_traces(11, 8);
  RegressorModel m = make_estimator_model({32}, Activation::Relu, 2, false);
  TrainOptions o;
  o.steps = 1500;
  o.batch = 32;
  o.lr = 1e-3;
  o.seed = 3;
  const TrainingMonitor mon = train_estimator(m, traces, o);
  const std::vector<double> means = block_means(mon.history(), 100);
  ASSERT_EQ(means.size(), 15u);
  for (std::size_t i = 1; i < means.size(); ++i) EXPECT_LE(means[i], means[i - 1]) << "block " << i;
}

namespace {

// Random in-bounds windows whose labels carry no force.
struct ZeroForceDraw {
  int inputs;
  void operator()(Rng& rng, int batch, Mlp<float>::Mat& X, Mlp<float>::Mat& T) const {
    const auto bounds = observation_bounds();
    X.resize(inputs, batch);
    T = Mlp<float>::Mat::Zero(kEstimateDim, batch);
    for (int b = 0; b < batch; ++b)
      for (int i = 0; i < inputs; ++i) {
        const auto& [lo, hi] = bounds[static_cast<std::size_t>(i) % kObservationDim];
        X(i, b) = static_cast<float>(rng.uniform(lo, hi));
      }
  }
};

float max_force_prediction(const RegressorModel& m) {
  Rng rng(99);
  Mlp<float>::Mat X, T;
  ZeroForceDraw{m.inputs()}(rng, 200, X, T);
  return m.predict_raw(X).topRows(3).cwiseAbs().maxCoeff();
}

}  // namespace

TEST(Training, ZeroForceDatasetPredictsZeroForce) {
  RegressorModel m = make_estimator_model({16}, Activation::Relu, 6);
  const ZeroForceDraw draw{m.inputs()};
  fit_linear_part(m, draw, 2048, 1e-6, 1);
  TrainOptions o;
  o.steps = 1000;
  o.batch = 32;
  train_regressor(m, draw, o);
  EXPECT_LT(max_force_prediction(m), 1.0f);
}

TEST(Training, DivergenceDetected) {
  TrainOptions o;
  TrainingMonitor mon(o);
  mon.record(1.0);
  EXPECT_THROW(mon.record(std::nan("")), Error);
  TrainingMonitor slow(o);
  slow.record(1.0);
  try {
    for (int i = 0; i < 600; ++i) slow.record(20.0);
    FAIL() << "expected Divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Divergence);
  }
}

TEST(Training, EmptyDatasetRejected) {
  EXPECT_THROW(WindowSampler(std::vector<EpisodeTrace>{}), Error);
}

TEST(Traces, DeterministicPerSeed) {
  const auto a = small_traces(5, 2), b = small_traces(5, 2);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t e = 0; e < a.size(); ++e) {
    ASSERT_EQ(a[e].obs.size(), b[e].obs.size());
    for (std::size_t i = 0; i < a[e].obs.size(); ++i) {
      ASSERT_EQ(observation_features(a[e].obs[i]), observation_features(b[e].obs[i]));
      ASSERT_EQ(a[e].labels[i].to_array(), b[e].labels[i].to_array());
    }
  }
}
