#include <gtest/gtest.h>

#include "uniforce/rewards.hpp"

using namespace uniforce;

TEST(RewardLiterals, TableWeights) {
  const RewardConfig c;
  EXPECT_EQ(c.w_gripper_position, 2.0);
  EXPECT_EQ(c.position_scale, 0.5);
  EXPECT_EQ(c.w_base_velocity, 2.0);
  EXPECT_EQ(c.velocity_scale, 0.25);
  EXPECT_EQ(c.w_collision, -5.0);
  EXPECT_EQ(c.w_joint_limit, -10.0);
  EXPECT_EQ(c.joint_limit_fraction, 0.8);
  EXPECT_EQ(c.w_torques, -5e-6);
  EXPECT_EQ(c.w_joint_velocities, -8e-4);
  EXPECT_EQ(c.w_joint_acceleration, -2e-7);
  EXPECT_EQ(c.w_action_rate, -0.02);
  EXPECT_EQ(c.w_torque_limit, -0.005);
  EXPECT_EQ(c.torque_limit_fraction, 0.9);
  EXPECT_EQ(c.w_contact_number, 2.0);
  EXPECT_EQ(c.contact_threshold, 5.0);
  EXPECT_EQ(c.w_reference_motion, 1.0);
}

TEST(RewardLiterals, RandomizationRanges) {
  const RandomizationRanges r;
  EXPECT_EQ(r.friction_lo, 0.3);
  EXPECT_EQ(r.friction_hi, 2.0);
  EXPECT_EQ(r.body_mass_lo, 0.0);
  EXPECT_EQ(r.body_mass_hi, 15.0);
  EXPECT_EQ(r.com_lo, -0.15);
  EXPECT_EQ(r.com_hi, 0.15);
  EXPECT_EQ(r.motor_lo, 0.85);
  EXPECT_EQ(r.motor_hi, 1.15);
  EXPECT_EQ(r.payload_lo, 0.0);
  EXPECT_EQ(r.payload_hi, 0.5);
  EXPECT_EQ(r.push_lo, 0.0);
  EXPECT_EQ(r.push_hi, 0.8);
  EXPECT_EQ(r.push_interval, 8.0);
}

TEST(RewardEe, Examples) {
  const Vec3 x(0.5, 0.0, 0.3);
  EXPECT_DOUBLE_EQ(reward_ee_unified(x, x, Vec3::Zero(), Vec3::Zero(), 100.0), 2.0);
  EXPECT_NEAR(reward_ee_unified(x + Vec3(0, 0.3, 0.4), x, Vec3::Zero(), Vec3::Zero(), 100.0), 2.0 * std::exp(-1.0),
              1e-15);
  EXPECT_NEAR(reward_ee_unified(x + Vec3(0, 0.3, 0.4), x, Vec3::Zero(), Vec3::Zero(), 100.0), 0.7358, 5e-5);
  // tracking x_cmd while a 10 N force acts: the reward wants the compensated target
  EXPECT_NEAR(reward_ee_unified(x, x, Vec3::Zero(), Vec3(10, 0, 0), 100.0), 2.0 * std::exp(-0.1 / 0.5), 1e-15);
  EXPECT_NEAR(reward_ee_unified(x, x, Vec3::Zero(), Vec3(10, 0, 0), 100.0), 1.637, 5e-4);
  EXPECT_DOUBLE_EQ(reward_ee_unified(x + Vec3(0.1, 0, 0), x, Vec3::Zero(), Vec3(10, 0, 0), 100.0), 2.0);
}

TEST(RewardEe, ArgmaxAtCompensatedTarget) {
  Rng rng(17);
  const double K = 100.0, h = 0.02;
  for (int c = 0; c < 5; ++c) {
    const Vec3 x_cmd(rng.uniform(0.3, 0.6), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2));
    // forces chosen so the target lands on the grid
    const Vec3 F_cmd = Vec3(rng.index(5), rng.index(5), rng.index(5)) * 2.0;
    const Vec3 F_net = -Vec3(rng.index(5), rng.index(5), rng.index(5)) * 4.0;
    const Vec3 target = compute_ee_target(x_cmd, F_cmd, F_net, K);
    double best = -1.0;
    Vec3 arg = Vec3::Zero();
    for (int i = -10; i <= 10; ++i)
      for (int j = -10; j <= 10; ++j)
        for (int k = -10; k <= 10; ++k) {
          const Vec3 x = x_cmd + h * Vec3(i, j, k);
          const double r = reward_ee_unified(x, x_cmd, F_cmd, F_net, K);
          if (r > best) {
            best = r;
            arg = x;
          }
        }
    EXPECT_LT((arg - target).norm(), 1e-9) << "case " << c;
  }
}

TEST(RewardBase, Examples) {
  const BaseVelocity v{0.5, 0.1, 0.0};
  EXPECT_DOUBLE_EQ(reward_base_unified(v, v, Vec3::Zero(), 75.0), 2.0);
  EXPECT_NEAR(reward_base_unified({0.75, 0.1, 0.0}, v, Vec3::Zero(), 75.0), 2.0 * std::exp(-1.0), 1e-15);
  // halted under -37.5 N with a 0.5 m/s command
  EXPECT_DOUBLE_EQ(reward_base_unified({0, 0, 0}, {0.5, 0, 0}, Vec3(-37.5, 0, 0), 75.0), 2.0);
  EXPECT_THROW(reward_base_unified(v, v, Vec3::Zero(), 0.0), Error);
}

TEST(Penalties, ZeroMotionIsFree) {
  const RewardBreakdown b = penalties({});
  for (const auto& t : b.terms) EXPECT_EQ(t.weight * t.value, 0.0) << t.name;
  EXPECT_EQ(b.total(), 0.0);
}

TEST(Penalties, Examples) {
  PenaltyInput in;
  in.q = Vec3(0.85, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(penalties(in).find("joint_limit")->weight * penalties(in).find("joint_limit")->value, -10.0);
  PenaltyInput t;
  t.tau = Vec3(600.0, 800.0, 0.0);  // |tau|^2 = 1e6
  t.tau_max = Vec3::Constant(1e4);
  EXPECT_DOUBLE_EQ(penalties(t).total(), -5.0);
  PenaltyInput c;
  c.collision = true;
  EXPECT_DOUBLE_EQ(penalties(c).total(), -5.0);
}

TEST(Penalties, MonotoneInMagnitude) {
  const auto total_for = [](auto set) {
    PenaltyInput in;
    in.tau_max = Vec3::Constant(1e9);
    set(in);
    return penalties(in).total();
  };
  double prev[4] = {0, 0, 0, 0};
  for (double m = 0.0; m <= 10.0; m += 0.25) {
    const double vals[4] = {
        total_for([&](PenaltyInput& in) { in.tau = Vec3(m, -m, m); }),
        total_for([&](PenaltyInput& in) { in.q_dot = Vec3(m, 0, -m); }),
        total_for([&](PenaltyInput& in) { in.q_ddot = Vec3(0, m, m); }),
        total_for([&](PenaltyInput& in) { in.action = Vec3(m, 0, 0); }),
    };
    for (int i = 0; i < 4; ++i) {
      ASSERT_LE(vals[i], prev[i] + 1e-15) << "term " << i << " m " << m;
      prev[i] = vals[i];
    }
  }
}

TEST(Gait, ContactAndReference) {
  const std::array<bool, 4> all{true, true, true, true};
  const std::array<double, 4> loaded{20, 20, 20, 20};
  const Vec3 q(0.1, 0.2, 0.3);
  const RewardBreakdown b = gait_terms(loaded, all, q, q);
  EXPECT_DOUBLE_EQ(b.find("contact_number")->weight * b.find("contact_number")->value, 8.0);
  EXPECT_EQ(b.find("reference_motion")->value, 0.0);
  const std::array<double, 4> one_off{20, 0, 20, 20};
  EXPECT_DOUBLE_EQ(gait_terms(one_off, all, q, q).total(), 6.0);
}

TEST(Gait, StanceMaskFromClock) {
  EXPECT_EQ(stance_mask({0.0, 0.49, 0.5, 0.99}), (std::array<bool, 4>{true, true, false, false}));
}

TEST(Randomization, DrawsWithinRanges) {
  Rng rng(31);
  const RandomizationRanges r;
  for (int i = 0; i < 100000; ++i) {
    const RandomizationSample s = sample_randomization(rng, r);
    ASSERT_TRUE(s.friction >= r.friction_lo && s.friction <= r.friction_hi);
    ASSERT_TRUE(s.body_mass >= r.body_mass_lo && s.body_mass <= r.body_mass_hi);
    for (int a = 0; a < 3; ++a) ASSERT_TRUE(s.base_com[a] >= r.com_lo && s.base_com[a] <= r.com_hi);
    ASSERT_TRUE(s.motor_strength >= r.motor_lo && s.motor_strength <= r.motor_hi);
    ASSERT_TRUE(s.gripper_payload >= r.payload_lo && s.gripper_payload <= r.payload_hi);
    ASSERT_TRUE(s.push_velocity >= r.push_lo && s.push_velocity <= r.push_hi);
    ASSERT_EQ(s.push_interval, 8.0);
  }
}

TEST(Randomization, NominalIsIdentity) {
  const PlantParams p;
  const PlantParams q = apply(nominal_randomization(), p);
  EXPECT_EQ(q.friction, p.friction);
  EXPECT_EQ(q.base_mass, p.base_mass);
  EXPECT_EQ(q.motor_strength_scale, p.motor_strength_scale);
  EXPECT_EQ(q.payload, p.payload);
  EXPECT_EQ(q.push_velocity, 0.0);
  EXPECT_EQ(q.com_offset, p.com_offset);
}

TEST(Randomization, ApplyMapsEachRow) {
  RandomizationSample s;
  s.friction = 1.5;
  s.body_mass = 4.0;
  s.motor_strength = 0.9;
  s.gripper_payload = 0.25;
  s.push_velocity = 0.6;
  const PlantParams p = apply(s, PlantParams{});
  EXPECT_EQ(p.friction, 1.5);
  EXPECT_EQ(p.base_mass, PlantParams{}.base_mass + 4.0);
  EXPECT_EQ(p.motor_strength_scale, 0.9);
  EXPECT_EQ(p.payload, 0.25);
  EXPECT_EQ(p.push_velocity, 0.6);
  EXPECT_EQ(p.push_interval, 8.0);
}

TEST(TickRewards, TotalIsWeightedSum) {
  PlantState prev, s;
  s.x_ee = Vec3(0.5, 0.1, 0.0);
  s.v_ee = Vec3(0.1, 0.0, 0.0);
  s.actuator_force = Vec3(10, 0, 0);
  s.action = Vec3(0.2, 0.0, 0.0);
  s.t = 0.1;
  CommandBundle c;
  c.x_ee_cmd = Vec3(0.5, 0.0, 0.0);
  const RewardBreakdown b = tick_rewards(prev, s, c, ControlMode::position(), {}, PlantParams{});
  double sum = 0.0;
  for (const auto& t : b.terms) sum += t.weight * t.value;
  EXPECT_DOUBLE_EQ(b.total(), sum);
  EXPECT_NE(b.find("gripper_position"), nullptr);
  EXPECT_NE(b.find("contact_number"), nullptr);
}
