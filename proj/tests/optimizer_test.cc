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

#include <numeric>
#include <sstream>

#include "test_util.h"
#include "trajfuse/optimizer.h"
#include "trajfuse/random.h"
#include "trajfuse/trainer.h"

namespace trajfuse {
namespace {

constexpr std::size_t kL = kSegmentLength;

ChannelSchema GraspSchema() { return SkillSchema(SkillKind::kPlanarGrasp); }

ChannelSchema ForceSchema() {
  WorldOptions o;
  o.with_force = true;
  return SkillSchema(SkillKind::kPlanarGrasp, o);
}

// raw decoder output with the given per-point channel values and all flags
// negative
Value RawFrom(const Matrix& points, std::size_t segments) {
  const std::size_t c = static_cast<std::size_t>(points.cols());
  const std::size_t w = kL * (c + 1);
  std::vector<double> raw(segments * w, -5.0);
  for (std::size_t p = 0; p < static_cast<std::size_t>(points.rows()); ++p) {
    const std::size_t s = p / kL, j = p % kL;
    for (std::size_t ch = 0; ch < c; ++ch) raw[s * w + j * c + ch] = points(p, ch);
  }
  return Value::FromVector({segments, w}, raw, true, DType::kFloat64);
}

Checkpoint TinyCheckpoint(SkillKind kind, std::uint64_t seed, std::size_t steps) {
  WorldOptions opts;
  opts.image_size = 32;
  const Dataset ds = GenerateDataset(kind, 16, seed, opts);
  ModelConfig c;
  c.d_model = 16;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.n_heads = 2;
  c.pos_grid = 2;
  c.schema = ds.schema;
  c.param_dim = ds.param_dim;
  TrainConfig t;
  t.steps = steps;
  t.batch_size = 8;
  t.warmup_steps = 1;
  t.seed = seed;
  return Train(c, t, ds);
}

TEST(PhiTest, Examples) {
  const std::vector<double> ones = {1, 1, 1}, half = {0, 1};
  EXPECT_EQ(Phi(ones, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(Phi(half, 1.0), 0.5);
  EXPECT_THROW(Phi(std::vector<double>{}, 1.0), std::invalid_argument);
  EXPECT_THROW(Phi(Value(), 1.0), std::invalid_argument);
}

TEST(PhiTest, MatchesOneLinerAndGradient) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.Index(50);
    const double r_max = trial % 2 ? 1.0 : rng.Uniform(-2, 2);
    const auto r = testing::RandomVector(n, rng, -1, 2);
    const double oracle = std::transform_reduce(r.begin(), r.end(), 0.0, std::plus<>(),
                                                [&](double x) { return (r_max - x) * (r_max - x); }) /
                          static_cast<double>(n);
    EXPECT_NEAR(Phi(r, r_max), oracle, 1e-12);
    const Value v = Value::FromVector({n, 1}, r, true, DType::kFloat64);
    EXPECT_NEAR(Phi(v, r_max).item(), oracle, 1e-12);
    const auto g = Grad(Phi(v, r_max), {v})[0];
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_NEAR(g[i], -2.0 * (r_max - r[i]) / static_cast<double>(n), 1e-12);
    }
  }
  EXPECT_LT(testing::GradError([](auto& in) { return Phi(in[0], 1.0); },
                               {testing::RandomValue({7, 1}, rng)}, 2),
            1e-6);
}

TEST(ObjectiveTest, SuccessAtOneIsZero) {
  Matrix pts = Matrix::Zero(25, 3);
  pts.block(20, 2, 5, 1).setOnes();
  const Value raw = RawFrom(pts, 2);
  const NormStats stats = NormStats::Identity(3);
  Objective obj;
  obj.kind = ObjectiveKind::kSuccess;
  EXPECT_EQ(ObjectiveValue(obj, raw, GraspSchema(), stats, kL, 25).item(), 0.0);
  // a shorter length moves the window onto zeros
  EXPECT_DOUBLE_EQ(ObjectiveValue(obj, raw, GraspSchema(), stats, kL, 20).item(), 1.0);
}

TEST(ObjectiveTest, TargetPose) {
  Matrix pts = Matrix::Zero(10, 3);
  pts(9, 0) = 0.3;
  pts(9, 1) = 0.6;
  Objective obj;
  obj.kind = ObjectiveKind::kTargetPose;
  obj.target = {0.3, 0.6};
  const NormStats stats = NormStats::Identity(3);
  EXPECT_NEAR(ObjectiveValue(obj, RawFrom(pts, 1), GraspSchema(), stats, kL, 10).item(), 0.0,
              1e-15);
  obj.target = {0.3, 0.2};
  EXPECT_NEAR(ObjectiveValue(obj, RawFrom(pts, 1), GraspSchema(), stats, kL, 10).item(), 0.16,
              1e-12);
}

TEST(ObjectiveTest, ForceLimitHinge) {
  Matrix pts = Matrix::Zero(20, 5);
  pts.col(2).setConstant(3.0);
  pts.col(3).setConstant(-4.0);
  const NormStats stats = NormStats::Identity(5);
  Objective obj;
  obj.kind = ObjectiveKind::kForceLimit;
  // hinge inactive: coupling term only, success 0 everywhere -> 0.1 * 1
  EXPECT_NEAR(ObjectiveValue(obj, RawFrom(pts, 1), ForceSchema(), stats, kL, 20).item(), 0.1,
              1e-12);
  pts(0, 2) = 8.0;  // 2 over the limit at one of 20 points, averaged over 2 channels
  EXPECT_NEAR(ObjectiveValue(obj, RawFrom(pts, 1), ForceSchema(), stats, kL, 20).item(),
              0.1 + 0.5 * 4.0 / 20.0, 1e-12);
}

TEST(ObjectiveTest, DenormalizesChannels) {
  Matrix pts = Matrix::Zero(10, 3);
  pts(9, 0) = 1.0;  // normalized
  NormStats stats{{0.5, 0.0, 0.0}, {0.2, 1.0, 1.0}};
  Objective obj;
  obj.kind = ObjectiveKind::kTargetPose;
  obj.target = {0.7, 0.0};
  EXPECT_NEAR(ObjectiveValue(obj, RawFrom(pts, 1), GraspSchema(), stats, kL, 10).item(), 0.0,
              1e-15);
}

TEST(ObjectiveTest, MissingChannelNamesKind) {
  Objective obj;
  obj.kind = ObjectiveKind::kReward;
  try {
    ObjectiveValue(obj, RawFrom(Matrix::Zero(5, 3), 1), GraspSchema(), NormStats::Identity(3),
                   kL, 5);
    FAIL() << "expected SchemaMismatchError";
  } catch (const SchemaMismatchError& e) {
    EXPECT_NE(std::string(e.what()).find("reward"), std::string::npos);
  }
  obj.kind = ObjectiveKind::kForceLimit;
  EXPECT_THROW(ObjectiveValue(obj, RawFrom(Matrix::Zero(5, 3), 1), GraspSchema(),
                              NormStats::Identity(3), kL, 5),
               SchemaMismatchError);
}

TEST(ObjectiveTest, Validation) {
  Objective obj;
  obj.force_limit = 0.0;
  EXPECT_THROW(obj.Validate(), std::invalid_argument);
  obj = Objective();
  obj.r_max = std::numeric_limits<double>::infinity();
  EXPECT_THROW(obj.Validate(), std::invalid_argument);
  EXPECT_EQ(ParseObjectiveKind("force-limit"), ObjectiveKind::kForceLimit);
  EXPECT_FALSE(ParseObjectiveKind("speed").has_value());
}

TEST(PredictedLengthTest, FirstPositiveFlag) {
  Matrix pts = Matrix::Zero(40, 3);
  Value raw = RawFrom(pts, 2);
  EXPECT_EQ(PredictedLength(raw, 3, kL), 40u);
  std::vector<double> v = raw.ToVector();
  v[kL * 4 + kL * 3 + 7] = 1.0;  // second segment, point 7
  raw.Assign(v);
  EXPECT_EQ(PredictedLength(raw, 3, kL), 27u);
  v[kL * 3] = 1.0;  // very first point
  raw.Assign(v);
  EXPECT_EQ(PredictedLength(raw, 3, kL), 1u);
}

TEST(OptimizeTest, ZeroWeightModelConvergesAfterPatience) {
  Checkpoint ck = TinyCheckpoint(SkillKind::kPlanarGrasp, 1, 1);
  for (auto& [name, v] : ck.params.entries()) v.Assign(std::vector<double>(v.size(), 0.0));
  const EnvImage img = RenderEnv(MakeEnv(3), 32);
  const auto skill = MakeSkill(SkillKind::kPlanarGrasp, {0.3, 0.4});
  Objective obj;
  const OptimTrace trace = Optimize(ck, img, skill, obj);
  EXPECT_TRUE(trace.converged);
  EXPECT_EQ(trace.steps.size(), 10u);
  EXPECT_EQ(trace.final_params, skill.params);
  for (const OptimStep& s : trace.steps) EXPECT_EQ(s.grad_norm, 0.0);
  const GradCheckResult gc = GradCheck(ck, img, SkillKind::kPlanarGrasp, obj, 1, 2);
  EXPECT_EQ(gc.max_rel_error, 0.0);
}

TEST(OptimizeTest, StaysInBoundsAndLeavesModelUntouched) {
  const Checkpoint ck = TinyCheckpoint(SkillKind::kPlanarGrasp, 2, 30);
  const std::uint64_t before = ck.Hash();
  const EnvImage img = RenderEnv(MakeEnv(4), 32);
  OptimOptions opts;
  opts.lr = 50.0;  // large steps hit the bounds
  opts.max_iters = 15;
  Objective obj;
  obj.kind = ObjectiveKind::kTargetPose;
  obj.target = {5.0, -5.0};
  const OptimTrace trace = Optimize(ck, img, MakeSkill(SkillKind::kPlanarGrasp, {0.5, 0.5}), obj, opts);
  ASSERT_FALSE(trace.steps.empty());
  for (const OptimStep& s : trace.steps) {
    EXPECT_GE(s.params[0], 0.1);
    EXPECT_LE(s.params[0], 0.9);
    EXPECT_GE(s.params[1], 0.1);
    EXPECT_LE(s.params[1], 0.9);
  }
  EXPECT_LE(trace.steps.size(), 15u);
  EXPECT_EQ(ck.Hash(), before);
}

TEST(OptimizeTest, SmallStepsDoNotIncreaseObjective) {
  const Checkpoint ck = TinyCheckpoint(SkillKind::kRbfReach, 3, 30);
  const EnvImage img = RenderEnv(MakeEnv(5), 32);
  OptimOptions opts;
  opts.lr = 1e-4;
  opts.max_iters = 20;
  Objective obj;
  obj.kind = ObjectiveKind::kReward;
  const OptimTrace trace =
      Optimize(ck, img, MakeSkill(SkillKind::kRbfReach, std::vector<double>(10, 0.05)), obj, opts);
  for (std::size_t i = 1; i < trace.steps.size(); ++i) {
    EXPECT_LE(trace.steps[i].objective, trace.steps[i - 1].objective + 1e-12);
  }
}

TEST(OptimizeTest, MismatchedSkillThrows) {
  const Checkpoint ck = TinyCheckpoint(SkillKind::kPlanarGrasp, 4, 1);
  const EnvImage img = RenderEnv(MakeEnv(6), 32);
  Objective obj;
  EXPECT_THROW(Optimize(ck, img, MakeSkill(SkillKind::kRbfReach, std::vector<double>(10, 0.0)), obj),
               SchemaMismatchError);
  obj.kind = ObjectiveKind::kReward;
  EXPECT_THROW(Optimize(ck, img, MakeSkill(SkillKind::kPlanarGrasp, {0.5, 0.5}), obj),
               SchemaMismatchError);
}

TEST(GradCheckTest, TrainedTinyModels) {
  const EnvImage img = RenderEnv(MakeEnv(7), 32);
  Objective success;
  const Checkpoint grasp = TinyCheckpoint(SkillKind::kPlanarGrasp, 5, 20);
  EXPECT_LT(GradCheck(grasp, img, SkillKind::kPlanarGrasp, success, 11, 3).max_rel_error, 1e-3);
  Objective reward;
  reward.kind = ObjectiveKind::kReward;
  const Checkpoint reach = TinyCheckpoint(SkillKind::kRbfReach, 6, 20);
  const GradCheckResult gc = GradCheck(reach, img, SkillKind::kRbfReach, reward, 12, 3);
  EXPECT_LT(gc.max_rel_error, 1e-3);
  EXPECT_EQ(gc.points.size(), 3u);
  EXPECT_EQ(gc.analytic[0].size(), 10u);
}

TEST(TraceTest, CsvAndJsonl) {
  OptimTrace trace;
  trace.steps.push_back({{0.1, 0.2}, 0.5, 0.25});
  trace.steps.push_back({{0.15, 0.2}, 0.4, 0.125});
  trace.final_params = {0.2, 0.2};
  std::ostringstream csv_os, jsonl_os;
  WriteTraceCsv(csv_os, trace);
  WriteTraceJsonl(jsonl_os, trace);
  const std::string csv = csv_os.str(), jsonl = jsonl_os.str();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "iter,objective,grad_norm,p0,p1");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_EQ(std::count(jsonl.begin(), jsonl.end(), '\n'), 2);
}

}  // namespace
}  // namespace trajfuse
