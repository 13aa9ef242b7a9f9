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

#include "trajfuse/skill_world.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "trajfuse/random.h"

namespace trajfuse {
namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr std::array<float, 3> kBackground = {0.08f, 0.08f, 0.10f};
constexpr std::array<float, 3> kObjectColor = {0.90f, 0.12f, 0.10f};
// peak force 10 at the disk center, so the default limit of 6 can bind
constexpr double kForceStiffness = 200.0;

double RbfCenter(std::size_t k) {
  return static_cast<double>(k) / static_cast<double>(kRbfPerAxis - 1);
}

double Rbf(double s, std::size_t k) {
  const double d = s - RbfCenter(k);
  return std::exp(-d * d / (2.0 * kRbfWidth * kRbfWidth));
}

float Quantize(double v) {
  const long q = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<float>(q) / 255.0f;
}

// fraction of a pixel covered by a disk, 4x4 supersampling
double Coverage(std::size_t r, std::size_t c, std::size_t size, std::array<double, 2> center,
                double radius) {
  int inside = 0;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      const double x = (static_cast<double>(c) + (j + 0.5) / 4.0) / static_cast<double>(size);
      const double y = (static_cast<double>(r) + (i + 0.5) / 4.0) / static_cast<double>(size);
      const double dx = x - center[0], dy = y - center[1];
      if (dx * dx + dy * dy <= radius * radius) ++inside;
    }
  }
  return inside / 16.0;
}

void DrawDisk(std::vector<double>& rgb, std::size_t size, std::array<double, 2> center,
              double radius, const std::array<float, 3>& color) {
  const auto lo = [&](double v) {
    return static_cast<std::size_t>(std::max(0.0, std::floor((v - radius) * size) - 1));
  };
  const auto hi = [&](double v) {
    return std::min(size, static_cast<std::size_t>(std::max(0.0, (v + radius) * size + 2)));
  };
  for (std::size_t r = lo(center[1]); r < hi(center[1]); ++r) {
    for (std::size_t c = lo(center[0]); c < hi(center[0]); ++c) {
      const double a = Coverage(r, c, size, center, radius);
      if (a == 0.0) continue;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double& v = rgb[(r * size + c) * 3 + ch];
        v = v * (1.0 - a) + color[ch] * a;
      }
    }
  }
}

std::size_t PoseChannel(const ChannelSchema& schema, std::size_t axis) {
  const auto idx = ChannelsOfKind(schema, ChannelKind::kPose);
  if (idx.size() < 2) throw std::invalid_argument("schema lacks two pose channels");
  return idx[axis];
}

}  // namespace

const char* SkillKindName(SkillKind kind) {
  return kind == SkillKind::kPlanarGrasp ? "grasp" : "reach";
}

std::optional<SkillKind> ParseSkillKind(const std::string& name) {
  if (name == "grasp") return SkillKind::kPlanarGrasp;
  if (name == "reach") return SkillKind::kRbfReach;
  return std::nullopt;
}

std::size_t ParamDim(SkillKind kind) {
  return kind == SkillKind::kPlanarGrasp ? 2 : 2 * kRbfPerAxis;
}

std::vector<Bounds> DefaultBounds(SkillKind kind) {
  if (kind == SkillKind::kPlanarGrasp) return {{0.1, 0.9}, {0.1, 0.9}};
  return std::vector<Bounds>(2 * kRbfPerAxis, Bounds{-0.5, 0.5});
}

SkillInstance MakeSkill(SkillKind kind, std::vector<double> params) {
  SkillInstance s{kind, std::move(params), DefaultBounds(kind)};
  if (s.params.size() != ParamDim(kind)) {
    throw std::invalid_argument(std::string(SkillKindName(kind)) + " skill expects " +
                                std::to_string(ParamDim(kind)) + " parameters, got " +
                                std::to_string(s.params.size()));
  }
  return s;
}

void CheckInBounds(const SkillInstance& skill) {
  if (skill.params.size() != skill.bounds.size()) {
    throw std::invalid_argument("parameter and bound counts differ");
  }
  for (std::size_t i = 0; i < skill.params.size(); ++i) {
    const double v = skill.params[i];
    if (!(v >= skill.bounds[i].lo && v <= skill.bounds[i].hi)) {
      throw std::out_of_range("parameter " + std::to_string(i) + " = " + std::to_string(v) +
                              " outside [" + std::to_string(skill.bounds[i].lo) + ", " +
                              std::to_string(skill.bounds[i].hi) + "]");
    }
  }
}

std::vector<double> ClampToBounds(std::span<const double> params,
                                  std::span<const Bounds> bounds) {
  std::vector<double> out(params.begin(), params.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::clamp(out[i], bounds[i].lo, bounds[i].hi);
  }
  return out;
}

ChannelSchema SkillSchema(SkillKind kind, const WorldOptions& opts) {
  ChannelSchema schema{{"x", ChannelKind::kPose}, {"y", ChannelKind::kPose}};
  if (kind == SkillKind::kPlanarGrasp) {
    if (opts.with_force) {
      schema.push_back({"fx", ChannelKind::kForce});
      schema.push_back({"fy", ChannelKind::kForce});
    }
    schema.push_back({"success", ChannelKind::kSuccess});
  } else {
    schema.push_back({"reward", ChannelKind::kReward});
  }
  return schema;
}

EnvSpec MakeEnv(std::uint64_t seed) {
  Rng rng(HashCombine(seed, 0x656e76ull));
  EnvSpec env;
  env.seed = seed;
  env.object_pos = {rng.Uniform(0.1, 0.9), rng.Uniform(0.1, 0.9)};
  env.length_fraction = rng.Uniform();
  env.distractor_pos = {0.1 + 0.8 * env.length_fraction, rng.Uniform(0.1, 0.9)};
  const double hue = rng.Uniform();
  env.distractor_color = {0.1f, static_cast<float>(0.3 + 0.6 * hue),
                          static_cast<float>(0.9 - 0.6 * hue)};
  return env;
}

EnvImage RenderEnv(const EnvSpec& env, std::size_t size) {
  std::vector<double> rgb(size * size * 3);
  for (std::size_t i = 0; i < size * size; ++i) {
    for (std::size_t ch = 0; ch < 3; ++ch) rgb[i * 3 + ch] = kBackground[ch];
  }
  DrawDisk(rgb, size, env.distractor_pos, kDistractorRadius, env.distractor_color);
  DrawDisk(rgb, size, env.object_pos, kObjectRadius, kObjectColor);
  EnvImage img(size, size);
  for (std::size_t i = 0; i < rgb.size(); ++i) img.pixels[i] = Quantize(rgb[i]);
  return img;
}

PlanBasis MakePlanBasis(SkillKind kind, std::size_t length) {
  const std::size_t p = ParamDim(kind);
  const auto t = static_cast<Eigen::Index>(length);
  PlanBasis b{Matrix::Zero(t, p), Matrix::Zero(t, p), Matrix::Zero(t, 2)};
  for (Eigen::Index i = 0; i < t; ++i) {
    const double s = length > 1 ? static_cast<double>(i) / static_cast<double>(length - 1) : 0.0;
    if (kind == SkillKind::kPlanarGrasp) {
      b.jac_x(i, 0) = s;
      b.jac_y(i, 1) = s;
      b.base(i, 0) = kHome[0] * (1.0 - s);
      b.base(i, 1) = kHome[1] * (1.0 - s);
    } else {
      for (std::size_t k = 0; k < kRbfPerAxis; ++k) {
        b.jac_x(i, k) = Rbf(s, k);
        b.jac_y(i, kRbfPerAxis + k) = Rbf(s, k);
      }
      b.base(i, 0) = kHome[0] + s * (kReachCenter[0] - kHome[0]);
      b.base(i, 1) = kHome[1] + s * (kReachCenter[1] - kHome[1]);
    }
  }
  return b;
}

std::array<double, 2> PlanPoseAt(const SkillInstance& skill, double s) {
  if (skill.kind == SkillKind::kPlanarGrasp) {
    return {kHome[0] + s * (skill.params[0] - kHome[0]),
            kHome[1] + s * (skill.params[1] - kHome[1])};
  }
  std::array<double, 2> p{kHome[0] + s * (kReachCenter[0] - kHome[0]),
                          kHome[1] + s * (kReachCenter[1] - kHome[1])};
  for (std::size_t k = 0; k < kRbfPerAxis; ++k) {
    p[0] += skill.params[k] * Rbf(s, k);
    p[1] += skill.params[kRbfPerAxis + k] * Rbf(s, k);
  }
  return p;
}

Trajectory Plan(const SkillInstance& skill, const WorldOptions& opts) {
  CheckInBounds(skill);
  ChannelSchema schema = SkillSchema(skill.kind, opts);
  Matrix pts = Matrix::Zero(kPlanLength, static_cast<Eigen::Index>(schema.size()));
  for (std::size_t i = 0; i < kPlanLength; ++i) {
    const auto p = PlanPoseAt(skill, static_cast<double>(i) / (kPlanLength - 1));
    pts(i, 0) = p[0];
    pts(i, 1) = p[1];
  }
  return MakeTrajectory(std::move(pts), std::move(schema), kPlanDt);
}

Value PlanGraph(SkillKind kind, const Value& params, const ChannelSchema& schema) {
  const std::size_t p = ParamDim(kind);
  if (params.size() != p) {
    throw DimensionError("plan: expected " + std::to_string(p) + " parameters, got " +
                         ShapeString(params.shape()));
  }
  const DType dtype = params.dtype();
  const PlanBasis basis = MakePlanBasis(kind);
  auto constant = [&](const Matrix& m) {
    return Value::FromVector(
        {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
        std::span<const double>(m.data(), static_cast<std::size_t>(m.size())), false, dtype);
  };
  Value column = Reshape(params, {p, 1});
  Value x = MatMul(constant(basis.jac_x), column);
  Value y = MatMul(constant(basis.jac_y), column);
  const std::size_t cx = PoseChannel(schema, 0), cy = PoseChannel(schema, 1);
  Matrix base = Matrix::Zero(kPlanLength, static_cast<Eigen::Index>(schema.size()));
  base.col(cx) = basis.base.col(0);
  base.col(cy) = basis.base.col(1);
  std::vector<Value> cols;
  Value zero = Value::Zeros({kPlanLength, 1}, false, dtype);
  for (std::size_t c = 0; c < schema.size(); ++c) {
    cols.push_back(c == cx ? x : (c == cy ? y : zero));
  }
  return Add(ConcatCols(cols), constant(base));
}

std::array<double, 2> Warp(const EnvSpec& env, std::array<double, 2> p, double s,
                           double amplitude) {
  const double envelope = amplitude * std::sin(kPi * s);
  const double phase_x = 2.0 * kPi * env.distractor_pos[1];
  const double phase_y = 2.0 * kPi * env.distractor_pos[0];
  return {envelope * std::sin(3.0 * kPi * p[1] + phase_x),
          envelope * std::sin(3.0 * kPi * p[0] + phase_y)};
}

std::size_t ExecutedGraspLength(const EnvSpec& env) {
  return kPlanLength - static_cast<std::size_t>(std::floor(10.0 * env.length_fraction));
}

double StepReward(std::array<double, 2> p, std::array<double, 2> object) {
  const double dx = p[0] - object[0], dy = p[1] - object[1];
  return std::exp(-(dx * dx + dy * dy) / kRewardScale);
}

double MeanReward(const Trajectory& traj, std::array<double, 2> object) {
  const std::size_t cx = PoseChannel(traj.schema, 0), cy = PoseChannel(traj.schema, 1);
  const std::size_t n = std::max<std::size_t>(traj.real_length(), 1);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += StepReward({traj.points(i, cx), traj.points(i, cy)}, object);
  }
  return acc / static_cast<double>(n);
}

Trajectory Execute(const SkillInstance& skill, const EnvSpec& env, const WorldOptions& opts) {
  CheckInBounds(skill);
  ChannelSchema schema = SkillSchema(skill.kind, opts);
  const std::size_t len =
      skill.kind == SkillKind::kPlanarGrasp ? ExecutedGraspLength(env) : kPlanLength;
  Matrix pts = Matrix::Zero(static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(schema.size()));
  const auto force = ChannelsOfKind(schema, ChannelKind::kForce);
  for (std::size_t i = 0; i < len; ++i) {
    const double s = static_cast<double>(i) / static_cast<double>(len - 1);
    std::array<double, 2> p = PlanPoseAt(skill, s);
    const auto w = Warp(env, p, s, opts.warp_amplitude);
    p[0] += w[0];
    p[1] += w[1];
    if (skill.kind == SkillKind::kPlanarGrasp && i + kAttractionWindow >= len) {
      // gain ramps linearly to its full value at the final point
      const double k = static_cast<double>(i + kAttractionWindow + 1 - len);
      const double gain = opts.attraction_gain * k / static_cast<double>(kAttractionWindow);
      p[0] += gain * (env.object_pos[0] - p[0]);
      p[1] += gain * (env.object_pos[1] - p[1]);
    }
    pts(i, 0) = p[0];
    pts(i, 1) = p[1];
    if (force.size() == 2) {
      const double dx = p[0] - env.distractor_pos[0], dy = p[1] - env.distractor_pos[1];
      const double dist = std::sqrt(dx * dx + dy * dy);
      const double depth = std::max(0.0, kDistractorRadius - dist);
      if (depth > 0.0 && dist > 0.0) {
        pts(i, force[0]) = kForceStiffness * depth * dx / dist;
        pts(i, force[1]) = kForceStiffness * depth * dy / dist;
      }
    }
    if (skill.kind == SkillKind::kRbfReach) {
      pts(i, static_cast<Eigen::Index>(schema.size() - 1)) = StepReward(p, env.object_pos);
    }
  }
  if (skill.kind == SkillKind::kPlanarGrasp) {
    const Eigen::Index last = static_cast<Eigen::Index>(len - 1);
    const double err = std::max(std::abs(pts(last, 0) - env.object_pos[0]),
                                std::abs(pts(last, 1) - env.object_pos[1]));
    const double success = err < kSuccessTolerance ? 1.0 : 0.0;
    const auto sc = static_cast<Eigen::Index>(schema.size() - 1);
    for (std::size_t i = len - std::min(len, kSuccessWindow); i < len; ++i) pts(i, sc) = success;
  }
  return MakeTrajectory(std::move(pts), std::move(schema), kPlanDt);
}

OracleVerdict Oracle(const SkillInstance& skill, const EnvSpec& env, const WorldOptions& opts) {
  const Trajectory exec = Execute(skill, env, opts);
  OracleVerdict v;
  v.mean_reward = MeanReward(exec, env.object_pos);
  if (skill.kind == SkillKind::kPlanarGrasp) {
    const auto sc = ChannelsOfKind(exec.schema, ChannelKind::kSuccess).at(0);
    v.success = exec.points(static_cast<Eigen::Index>(exec.length() - 1), sc) > 0.5;
  } else {
    v.success = v.mean_reward > 0.5;
  }
  return v;
}

}  // namespace trajfuse
