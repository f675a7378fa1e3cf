#include <gtest/gtest.h>

#include <cstring>

#include "uniforce/imitation.hpp"

using namespace uniforce;

namespace {

std::vector<EpisodeRecord> demos(TaskKind kind, std::uint64_t first_seed, int n, int max_steps = 200) {
  std::vector<EpisodeRecord> out;
  for (int i = 0; i < n; ++i)
    out.push_back(record_expert_episode(default_task(kind), first_seed + static_cast<std::uint64_t>(i), nullptr, {},
                                        max_steps));
  return out;
}

BCPolicy tiny_policy(std::uint64_t seed) {
  const BCDataset d = build_dataset(demos(TaskKind::WipeWall, seed, 3, 80), true);
  TrainOptions o;
  o.steps = 50;
  o.batch = 16;
  o.seed = seed;
  return train_bc(d, o, {8}).policy;
}

}  // namespace

TEST(Tasks, ExpertSucceedsOnEveryTask) {
  for (TaskKind k : {TaskKind::WipeWall, TaskKind::PushLatch, TaskKind::PushLatchOccluded})
    for (std::uint64_t seed : {1, 2, 3}) {
      const RolloutResult r = rollout(expert_policy(), default_task(k), seed, true);
      EXPECT_TRUE(r.success) << to_string(k) << " seed " << seed;
    }
}

TEST(Tasks, ZeroPolicyFails) {
  for (TaskKind k : {TaskKind::WipeWall, TaskKind::PushLatch}) {
    const RolloutResult r = rollout(zero_policy(), default_task(k), 4, true, 300);
    EXPECT_FALSE(r.success) << to_string(k);
    EXPECT_EQ(r.steps, 300);
  }
}

TEST(Tasks, LatchSuccessNeedsPressAndRelease) {
  const RolloutResult ok = rollout(expert_policy(), default_task(TaskKind::PushLatch), 5, true);
  EXPECT_TRUE(ok.pressed);
  EXPECT_TRUE(ok.released);
  EXPECT_TRUE(ok.success);
  // pressing and never backing off keeps the latch pressed
  const PolicyFn push_only = [](const TaskTracker& t, const Session&, const std::vector<std::array<float, kBcFrameDim>>&) {
    CommandBundle c;
    c.x_ee_cmd = Vec3(t.instance().surface_x, t.instance().y0, t.instance().z0);
    c.F_ee_cmd = Vec3(25, 0, 0);
    return c;
  };
  const RolloutResult held = rollout(push_only, default_task(TaskKind::PushLatch), 5, true, 300);
  EXPECT_TRUE(held.pressed);
  EXPECT_FALSE(held.released);
  EXPECT_FALSE(held.success);
}

TEST(Tasks, WipeSuccessNeedsCoverageAndBand) {
  const RolloutResult ok = rollout(expert_policy(), default_task(TaskKind::WipeWall), 6, true);
  EXPECT_GE(ok.coverage, 0.9);
  EXPECT_GE(ok.band_occupancy, 0.8);
  // same sweep pressed far too hard leaves the force band
  const PolicyFn hard = [](const TaskTracker& t, const Session& s, const std::vector<std::array<float, kBcFrameDim>>&) {
    CommandBundle c = expert_command(t, s.state(), s.environment());
    c.F_ee_cmd.x() = 60.0;
    return c;
  };
  const RolloutResult r = rollout(hard, default_task(TaskKind::WipeWall), 6, true);
  EXPECT_GE(r.coverage, 0.9);
  EXPECT_LT(r.band_occupancy, 0.8);
  EXPECT_FALSE(r.success);
}

TEST(Tasks, InstancesDeterministicPerSeed) {
  const TaskSpec s = default_task(TaskKind::PushLatch);
  EXPECT_EQ(make_instance(s, 9).trigger, make_instance(s, 9).trigger);
  EXPECT_NE(make_instance(s, 9).trigger, make_instance(s, 10).trigger);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const TaskInstance in = make_instance(s, seed);
    ASSERT_GE(in.trigger, s.trigger_lo);
    ASSERT_LE(in.trigger, s.trigger_hi);
  }
}

TEST(Rollout, Deterministic) {
  const TaskSpec s = default_task(TaskKind::WipeWall);
  const RolloutResult a = rollout(expert_policy(), s, 7, true), b = rollout(expert_policy(), s, 7, true);
  EXPECT_EQ(a.steps, b.steps);
  EXPECT_EQ(a.coverage, b.coverage);
  EXPECT_EQ(a.peak_force, b.peak_force);
  const auto e1 = demos(TaskKind::WipeWall, 7, 1)[0], e2 = demos(TaskKind::WipeWall, 7, 1)[0];
  EXPECT_EQ(episode_id(e1), episode_id(e2));
}

TEST(Dataset, SampleCount) {
  const auto eps = demos(TaskKind::WipeWall, 20, 4, 60);
  std::size_t expected = 0;
  for (const auto& e : eps) expected += e.frames.size() - kBcWindow + 1;
  const BCDataset d = build_dataset(eps, true);
  EXPECT_EQ(d.samples(), expected);
  EXPECT_EQ(d.X.rows(), static_cast<Eigen::Index>(kBcWindow * kBcFrameDim));
  EXPECT_EQ(d.T.rows(), 6);
}

TEST(Dataset, PositionOnlyHasNoForce) {
  const auto eps = demos(TaskKind::WipeWall, 30, 3, 60);
  const BCDataset with = build_dataset(eps, true), without = build_dataset(eps, false);
  EXPECT_EQ(without.T.rows(), 3);
  for (std::size_t w = 0; w < kBcWindow; ++w)
    for (std::size_t i = kBcFrameDim - 3; i < kBcFrameDim; ++i)
      EXPECT_TRUE((without.X.row(static_cast<Eigen::Index>(w * kBcFrameDim + i)).array() == 0.0f).all());
  // zeroing the force columns of the full dataset gives the position-only one
  Mlp<float>::Mat X = with.X;
  for (std::size_t w = 0; w < kBcWindow; ++w)
    for (std::size_t i = kBcFrameDim - 3; i < kBcFrameDim; ++i) X.row(static_cast<Eigen::Index>(w * kBcFrameDim + i)).setZero();
  EXPECT_EQ(X, without.X);
  EXPECT_EQ(with.T.topRows(3), without.T);
  EXPECT_GT(with.X.bottomRows(3).cwiseAbs().maxCoeff(), 1.0f);
}

TEST(Dataset, HashStable) {
  const auto eps = demos(TaskKind::WipeWall, 40, 3, 50);
  EXPECT_EQ(build_dataset(eps, true).hash(), build_dataset(demos(TaskKind::WipeWall, 40, 3, 50), true).hash());
  EXPECT_NE(build_dataset(eps, true).hash(), build_dataset(eps, false).hash());
}

TEST(Dataset, SplitByEpisode) {
  const auto eps = demos(TaskKind::WipeWall, 50, 10, 40);
  const BCDataset d = build_dataset(eps, true, 5);
  EXPECT_EQ(d.is_validation, (std::vector<bool>{false, false, false, false, true, false, false, false, false, true}));
  const auto val = d.split_indices(true), train = d.split_indices(false);
  EXPECT_EQ(val.size() + train.size(), d.samples());
  for (std::size_t i : val) EXPECT_TRUE(d.episode_of[i] == 4 || d.episode_of[i] == 9);
  for (std::size_t i : train) EXPECT_FALSE(d.episode_of[i] == 4 || d.episode_of[i] == 9);
}

TEST(Dataset, Rejections) {
  EXPECT_THROW(build_dataset({}, true), Error);
  auto eps = demos(TaskKind::WipeWall, 60, 1, 40);
  eps.push_back(demos(TaskKind::PushLatch, 60, 1, 40)[0]);
  try {
    build_dataset(eps, true);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SchemaMismatch);
  }
}

TEST(Dataset, Manifest) {
  const auto eps = demos(TaskKind::WipeWall, 70, 5, 30);
  const BCDataset d = build_dataset(eps, true, 5);
  const std::vector<std::string> paths{"a", "b", "c", "d", "e"};
  const auto m = dataset_manifest(paths, d);
  EXPECT_EQ(m.at("samples").get<std::size_t>(), d.samples());
  EXPECT_EQ(m.at("hash").get<std::string>(), d.hash());
  ASSERT_EQ(m.at("episodes").size(), 5u);
  EXPECT_EQ(m.at("episodes")[4].at("split"), "validation");
  EXPECT_EQ(m.at("episodes")[0].at("split"), "train");
  EXPECT_THROW(dataset_manifest({"a"}, d), Error);
}

TEST(Bc, GradientAtPolicyShape) {
  Rng rng(3);
  const int in = static_cast<int>(kBcWindow * kBcFrameDim);
  for (bool skip : {false, true}) {
    Mlp<double> net({in, 8, 8, 6}, Activation::Relu, rng, skip);
    auto flat = net.flat_parameters();
    for (auto& v : flat) v += rng.uniform(-0.05, 0.05);
    net.set_flat_parameters(flat);
    Mlp<double>::Mat X(in, 5), T(6, 5);
    for (int j = 0; j < 5; ++j) {
      for (int i = 0; i < in; ++i) X(i, j) = rng.uniform(-1, 1);
      for (int i = 0; i < 6; ++i) T(i, j) = rng.uniform(-1, 1);
    }
    Mlp<double>::Gradients g;
    net.loss_and_gradient(X, T, g);
    const auto analytic = Mlp<double>::flatten(g);
    double num = 0.0, den = 0.0;
    const double h = 1e-6;
    for (std::size_t i = 0; i < flat.size(); ++i) {
      const double keep = flat[i];
      flat[i] = keep + h;
      net.set_flat_parameters(flat);
      const double up = net.loss(X, T);
      flat[i] = keep - h;
      net.set_flat_parameters(flat);
      const double down = net.loss(X, T);
      flat[i] = keep;
      const double fd = (up - down) / (2 * h);
      num += (fd - analytic[i]) * (fd - analytic[i]);
      den += fd * fd;
    }
    net.set_flat_parameters(flat);
    EXPECT_LT(std::sqrt(num / den), 1e-4) << "skip " << skip;
  }
}

TEST(Bc, SingleSampleIsMemorized) {
  auto eps = demos(TaskKind::WipeWall, 80, 1, 40);
  eps[0].frames.resize(kBcWindow);
  const BCDataset d = build_dataset(eps, true, 0);
  ASSERT_EQ(d.samples(), 1u);
  TrainOptions o;
  o.steps = 500;
  o.batch = 1;
  o.lr = 1e-3;
  const BCTrainResult r = train_bc(d, o, {16});
  EXPECT_LT(r.loss_history.back(), 1e-6);
  EXPECT_LT(r.channel_rms[0], 1e-3);
  EXPECT_LT(r.channel_rms[1], 0.05);
}

TEST(Bc, PolicyOutputsWithinRanges) {
  const BCPolicy p = tiny_policy(90);
  std::vector<std::array<float, kBcFrameDim>> w(kBcWindow);
  for (auto& f : w) f.fill(1e4f);
  const CommandBundle c = p.act(w);
  const CommandRanges r;
  for (int i = 0; i < 3; ++i) {
    EXPECT_GE(c.F_ee_cmd[i], r.F_ee.lo);
    EXPECT_LE(c.F_ee_cmd[i], r.F_ee.hi);
  }
  EXPECT_LE(c.x_ee_cmd.norm(), r.r.hi + 1e-9);
  EXPECT_THROW(p.act({w[0]}), Error);
}

TEST(Ablation, IdenticalPoliciesHaveZeroDelta) {
  const BCPolicy p = tiny_policy(100);
  const AblationRow row = compare_policies(default_task(TaskKind::WipeWall), p, p, 3, 500);
  EXPECT_EQ(row.trials, 3);
  EXPECT_EQ(row.success_with, row.success_without);
  EXPECT_EQ(row.delta(), 0.0);
  EXPECT_EQ(row.seeds, (std::vector<std::uint64_t>{500, 501, 502}));
}

TEST(Ablation, ReferenceTable) {
  ASSERT_EQ(kReferenceAblation.size(), 4u);
  const double with[] = {0.58, 0.70, 0.72, 0.76};
  const double without[] = {0.22, 0.36, 0.30, 0.30};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(kReferenceAblation[i].with_force, with[i]);
    EXPECT_EQ(kReferenceAblation[i].without_force, without[i]);
  }
  EXPECT_STREQ(kReferenceAblation[0].task, "wipe-blackboard");
}

TEST(Ablation, CsvLayout) {
  AblationRow r;
  r.task = "wipe";
  r.trials = 4;
  r.success_with = 3;
  r.success_without = 1;
  r.seeds = {10, 11, 12, 13};
  EXPECT_EQ(ablation_csv({r}),
            "task,trials,success_with_force,success_without_force,delta,first_seed,last_seed\n"
            "wipe,4,0.75,0.25,0.5,10,13\n");
}
