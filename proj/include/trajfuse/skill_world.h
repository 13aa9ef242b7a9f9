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

#ifndef TRAJFUSE_SKILL_WORLD_H_
#define TRAJFUSE_SKILL_WORLD_H_

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trajfuse/tensor.h"
#include "trajfuse/trajectory.h"
#include "trajfuse/vision.h"

namespace trajfuse {

// Deterministic toy world standing in for real executions. Two skills:
//
//   grasp: params (gx, gy); a straight line from home to the grasp point.
//          The executed motion is resampled to a seed-dependent length,
//          warped by a smooth field and pulled toward the object near the end.
//   reach: params are radial-basis weights (5 per axis) bending the line from
//          home to the workspace center; execution adds the same warp and
//          records a dense reward exp(-|p - object|^2 / 0.02).

enum class SkillKind : std::uint8_t { kPlanarGrasp = 0, kRbfReach = 1 };

const char* SkillKindName(SkillKind kind);
std::optional<SkillKind> ParseSkillKind(const std::string& name);

inline constexpr std::array<double, 2> kHome = {0.5, 0.0};
inline constexpr std::array<double, 2> kReachCenter = {0.5, 0.5};
inline constexpr std::size_t kPlanLength = 60;
inline constexpr std::size_t kRbfPerAxis = 5;
inline constexpr double kRbfWidth = 0.1;
inline constexpr double kObjectRadius = 0.04;
inline constexpr double kDistractorRadius = 0.05;
inline constexpr double kSuccessTolerance = 0.05;
inline constexpr std::size_t kSuccessWindow = 5;
inline constexpr std::size_t kAttractionWindow = 10;
inline constexpr double kRewardScale = 0.02;
inline constexpr double kPlanDt = 0.05;

struct Bounds {
  double lo = 0.0;
  double hi = 1.0;
};

struct SkillInstance {
  SkillKind kind = SkillKind::kPlanarGrasp;
  std::vector<double> params;
  std::vector<Bounds> bounds;
};

std::size_t ParamDim(SkillKind kind);
std::vector<Bounds> DefaultBounds(SkillKind kind);
SkillInstance MakeSkill(SkillKind kind, std::vector<double> params);
// throws std::out_of_range naming the first violating dimension
void CheckInBounds(const SkillInstance& skill);
std::vector<double> ClampToBounds(std::span<const double> params,
                                  std::span<const Bounds> bounds);

struct WorldOptions {
  bool with_force = false;
  double warp_amplitude = 0.01;
  double attraction_gain = 0.3;
  std::size_t image_size = 128;
};

ChannelSchema SkillSchema(SkillKind kind, const WorldOptions& opts = {});

struct EnvSpec {
  std::uint64_t seed = 0;
  std::array<double, 2> object_pos{0.5, 0.5};
  std::array<double, 2> distractor_pos{0.2, 0.8};
  std::array<float, 3> distractor_color{0.1f, 0.6f, 0.6f};
  // fraction in [0, 1) selecting the executed grasp length
  double length_fraction = 0.0;
};

// Every nuisance factor is a function of the seed and visible in the image:
// the distractor's x coordinate encodes length_fraction and its position sets
// the warp phase.
EnvSpec MakeEnv(std::uint64_t seed);

// 8-bit quantized render; object in red, distractor in a seed-dependent hue.
EnvImage RenderEnv(const EnvSpec& env, std::size_t size = 128);

// Linear plan model: pose_x = base_x + jac_x * params (same for y).
struct PlanBasis {
  Matrix jac_x;  // T x P
  Matrix jac_y;  // T x P
  Matrix base;   // T x 2
};
PlanBasis MakePlanBasis(SkillKind kind, std::size_t length = kPlanLength);

// plan pose at normalized time s in [0, 1]
std::array<double, 2> PlanPoseAt(const SkillInstance& skill, double s);

// The simulated trajectory; throws std::out_of_range for out-of-bounds params.
Trajectory Plan(const SkillInstance& skill, const WorldOptions& opts = {});

// Differentiable plan points [T x C] from params [1 x P]; non-pose channels 0.
Value PlanGraph(SkillKind kind, const Value& params, const ChannelSchema& schema);

// Ground-truth execution.
Trajectory Execute(const SkillInstance& skill, const EnvSpec& env,
                   const WorldOptions& opts = {});

// smooth field added to executed poses at normalized time s
std::array<double, 2> Warp(const EnvSpec& env, std::array<double, 2> p, double s,
                           double amplitude);

std::size_t ExecutedGraspLength(const EnvSpec& env);

double StepReward(std::array<double, 2> p, std::array<double, 2> object);
// mean StepReward over the real points of a trajectory's pose channels
double MeanReward(const Trajectory& traj, std::array<double, 2> object);

struct OracleVerdict {
  bool success = false;
  double mean_reward = 0.0;
};

// Recomputes the execution and reads off the true outcome.
OracleVerdict Oracle(const SkillInstance& skill, const EnvSpec& env,
                     const WorldOptions& opts = {});

}  // namespace trajfuse

#endif  // TRAJFUSE_SKILL_WORLD_H_
