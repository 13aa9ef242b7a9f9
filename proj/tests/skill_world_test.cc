// Copyright 2026 The trajfuse Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "test_util.h"
#include "trajfuse/random.h"
#include "trajfuse/skill_world.h"

namespace trajfuse {
namespace {

EnvSpec FixedEnv(double ox, double oy) {
  EnvSpec env = MakeEnv(7);
  env.object_pos = {ox, oy};
  return env;
}

WorldOptions NoWarp() {
  WorldOptions o;
  o.warp_amplitude = 0.0;
  return o;
}

double FinalSuccess(const Trajectory& t) {
  return t.points(static_cast<Eigen::Index>(t.length() - 1), 2);
}

TEST(SkillTest, NamesBoundsAndDims) {
  EXPECT_EQ(ParseSkillKind("grasp"), SkillKind::kPlanarGrasp);
  EXPECT_EQ(ParseSkillKind("reach"), SkillKind::kRbfReach);
  EXPECT_FALSE(ParseSkillKind("push").has_value());
  EXPECT_EQ(ParamDim(SkillKind::kPlanarGrasp), 2u);
  EXPECT_EQ(ParamDim(SkillKind::kRbfReach), 10u);
  EXPECT_THROW(MakeSkill(SkillKind::kPlanarGrasp, {0.5}), std::invalid_argument);
  EXPECT_THROW(CheckInBounds(MakeSkill(SkillKind::kPlanarGrasp, {0.5, 0.95})),
               std::out_of_range);
  const std::vector<double> raw = {-1.0, 2.0};
  const auto clamped = ClampToBounds(raw, DefaultBounds(SkillKind::kPlanarGrasp));
  EXPECT_EQ(clamped, (std::vector<double>{0.1, 0.9}));
}

TEST(PlanTest, GraspIsStraightLineFromHome) {
  const Trajectory plan = Plan(MakeSkill(SkillKind::kPlanarGrasp, {0.3, 0.7}));
  ASSERT_EQ(plan.length(), kPlanLength);
  EXPECT_DOUBLE_EQ(plan.points(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(plan.points(0, 1), 0.0);
  EXPECT_NEAR(plan.points(59, 0), 0.3, 1e-15);
  EXPECT_NEAR(plan.points(59, 1), 0.7, 1e-15);
  for (Eigen::Index i = 0; i < 60; ++i) EXPECT_EQ(plan.points(i, 2), 0.0);
}

TEST(PlanTest, ReachWithZeroWeightsFollowsCenterLine) {
  const Trajectory plan = Plan(MakeSkill(SkillKind::kRbfReach, std::vector<double>(10, 0.0)));
  EXPECT_NEAR(plan.points(59, 0), kReachCenter[0], 1e-15);
  EXPECT_NEAR(plan.points(59, 1), kReachCenter[1], 1e-15);
  EXPECT_NEAR(plan.points(30, 1), 0.5 * 30.0 / 59.0, 1e-15);
}

TEST(PlanTest, GraphMatchesPlanAndJacobian) {
  ScopedDType d(DType::kFloat64);
  Rng rng(3);
  for (SkillKind kind : {SkillKind::kPlanarGrasp, SkillKind::kRbfReach}) {
    const auto bounds = DefaultBounds(kind);
    std::vector<double> p;
    for (const Bounds& b : bounds) p.push_back(rng.Uniform(b.lo, b.hi));
    const ChannelSchema schema = SkillSchema(kind);
    const Value v = Value::FromVector({1, p.size()}, p, true);
    const auto graph = PlanGraph(kind, v, schema).ToVector();
    const Trajectory plan = Plan(MakeSkill(kind, p));
    for (std::size_t i = 0; i < 60; ++i) {
      for (std::size_t c = 0; c < schema.size(); ++c) {
        EXPECT_NEAR(graph[i * schema.size() + c], plan.points(i, c), 1e-12);
      }
    }
    EXPECT_LT(testing::GradError([&](auto& in) { return PlanGraph(kind, in[0], schema); },
                                 {v.Detach(true)}, 5),
              1e-5);
  }
  EXPECT_THROW(PlanGraph(SkillKind::kPlanarGrasp, Value::Zeros({1, 3}), SkillSchema(SkillKind::kPlanarGrasp)),
               DimensionError);
}

TEST(ExecuteTest, GraspAtObjectSucceeds) {
  const EnvSpec env = FixedEnv(0.4, 0.6);
  const Trajectory exec = Execute(MakeSkill(SkillKind::kPlanarGrasp, {0.4, 0.6}), env, NoWarp());
  const std::size_t n = exec.length();
  for (std::size_t i = n - kSuccessWindow; i < n; ++i) EXPECT_EQ(exec.points(i, 2), 1.0);
  EXPECT_EQ(exec.points(static_cast<Eigen::Index>(n - kSuccessWindow - 1), 2), 0.0);
  EXPECT_TRUE(Oracle(MakeSkill(SkillKind::kPlanarGrasp, {0.4, 0.6}), env, NoWarp()).success);
}

TEST(ExecuteTest, GraspTenCentimetersAwayFails) {
  // with gain 0.3 the final error is 0.07, above the tolerance
  const EnvSpec env = FixedEnv(0.4, 0.6);
  const auto skill = MakeSkill(SkillKind::kPlanarGrasp, {0.5, 0.6});
  EXPECT_EQ(FinalSuccess(Execute(skill, env, NoWarp())), 0.0);
  EXPECT_FALSE(Oracle(skill, env, NoWarp()).success);
}

TEST(ExecuteTest, AttractionPullsFinalPoint) {
  const EnvSpec env = FixedEnv(0.4, 0.6);
  const Trajectory exec = Execute(MakeSkill(SkillKind::kPlanarGrasp, {0.5, 0.6}), env, NoWarp());
  const auto last = static_cast<Eigen::Index>(exec.length() - 1);
  EXPECT_NEAR(exec.points(last, 0), 0.5 + 0.3 * (0.4 - 0.5), 1e-12);
}

TEST(ExecuteTest, WarpStaysSmall) {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const EnvSpec env = MakeEnv(rng.NextBits());
    const auto skill = MakeSkill(SkillKind::kRbfReach, testing::RandomVector(10, rng, -0.5, 0.5));
    const Trajectory plan = Plan(skill), exec = Execute(skill, env);
    for (Eigen::Index i = 0; i < 60; ++i) {
      EXPECT_LE(std::abs(exec.points(i, 0) - plan.points(i, 0)), 0.02);
      EXPECT_LE(std::abs(exec.points(i, 1) - plan.points(i, 1)), 0.02);
    }
  }
}

TEST(ExecuteTest, RewardChannel) {
  EXPECT_DOUBLE_EQ(StepReward({0.5, 0.5}, {0.5, 0.5}), 1.0);
  EXPECT_NEAR(StepReward({0.5, 0.5}, {0.5, 0.5 + std::sqrt(0.02)}), std::exp(-1.0), 1e-12);
  const EnvSpec env = MakeEnv(4);
  const auto skill = MakeSkill(SkillKind::kRbfReach, std::vector<double>(10, 0.1));
  const Trajectory exec = Execute(skill, env);
  for (Eigen::Index i = 0; i < 60; ++i) {
    EXPECT_NEAR(exec.points(i, 2), StepReward({exec.points(i, 0), exec.points(i, 1)}, env.object_pos),
                1e-15);
  }
  EXPECT_NEAR(Oracle(skill, env).mean_reward, MeanReward(exec, env.object_pos), 1e-15);
}

TEST(ExecuteTest, ForceChannelsOnlyInsideDistractor) {
  WorldOptions opts;
  opts.with_force = true;
  EnvSpec env = FixedEnv(0.3, 0.5);
  env.distractor_pos = {0.3, 0.5};
  const Trajectory inside = Execute(MakeSkill(SkillKind::kPlanarGrasp, {0.3, 0.5}), env, opts);
  ASSERT_EQ(inside.schema.size(), 5u);
  double peak = 0.0;
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(inside.length()); ++i) {
    peak = std::max(peak, std::hypot(inside.points(i, 2), inside.points(i, 3)));
  }
  EXPECT_GT(peak, 6.0);  // the default force limit can bind
  const Trajectory outside = Execute(MakeSkill(SkillKind::kPlanarGrasp, {0.9, 0.1}), env, opts);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(outside.length()); ++i) {
    EXPECT_EQ(outside.points(i, 2), 0.0);
  }
}

TEST(ExecuteTest, DeterministicPerSeed) {
  const auto skill = MakeSkill(SkillKind::kPlanarGrasp, {0.2, 0.3});
  const Trajectory a = Execute(skill, MakeEnv(11)), b = Execute(skill, MakeEnv(11));
  EXPECT_EQ(a.points, b.points);
  EXPECT_EQ(RenderEnv(MakeEnv(11)), RenderEnv(MakeEnv(11)));
  EXPECT_NE(RenderEnv(MakeEnv(11)), RenderEnv(MakeEnv(12)));
}

TEST(ExecuteTest, LengthsVary) {
  std::set<std::size_t> lengths;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const std::size_t n = ExecutedGraspLength(MakeEnv(seed));
    EXPECT_GE(n, 51u);
    EXPECT_LE(n, 60u);
    lengths.insert(n);
  }
  EXPECT_GE(lengths.size(), 5u);
}

TEST(ExecuteTest, BaseSuccessRateIsLow) {
  Rng rng(2024);
  int wins = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto skill =
        MakeSkill(SkillKind::kPlanarGrasp, {rng.Uniform(0.1, 0.9), rng.Uniform(0.1, 0.9)});
    wins += Oracle(skill, MakeEnv(rng.NextBits())).success;
  }
  EXPECT_GE(wins, 10);
  EXPECT_LE(wins, 100);
}

TEST(RenderTest, ObjectDiskAtExpectedPixel) {
  EnvSpec env = FixedEnv(0.5, 0.5);
  env.distractor_pos = {0.1, 0.1};
  const EnvImage img = RenderEnv(env, 128);
  ASSERT_EQ(img.height, 128u);
  // row index follows y, column index follows x
  EXPECT_NEAR(img.at(64, 64, 0), 0.9, 1.0 / 255);
  EXPECT_NEAR(img.at(64, 64, 1), 0.12, 1.0 / 255);
  EXPECT_NEAR(img.at(0, 127, 0), 0.08, 1.0 / 255);
  for (float v : img.pixels) {
    EXPECT_EQ(v, std::round(v * 255.0f) / 255.0f);
  }
  ValidateImage(img);
}

}  // namespace
}  // namespace trajfuse
