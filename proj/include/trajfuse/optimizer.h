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


#ifndef TRAJFUSE_OPTIMIZER_H_
#define TRAJFUSE_OPTIMIZER_H_

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trajfuse/checkpoint.h"
#include "trajfuse/skill_world.h"
#include "trajfuse/tensor.h"
#include "trajfuse/vision.h"

namespace trajfuse {

enum class ObjectiveKind : std::uint8_t { kReward, kSuccess, kForceLimit, kTargetPose };

const char* ObjectiveKindName(ObjectiveKind kind);
std::optional<ObjectiveKind> ParseObjectiveKind(const std::string& name);

struct Objective {
  ObjectiveKind kind = ObjectiveKind::kSuccess;
  double r_max = 1.0;
  double force_limit = 6.0;
  // weight of the success term added to the force hinge
  double success_coupling = 0.1;
  std::array<double, 2> target{0.5, 0.5};

  void Validate() const;
};

// Mean squared distance of predicted rewards to r_max.
Value Phi(const Value& rewards, double r_max);
double Phi(std::span<const double> rewards, double r_max);

// Number of real points implied by raw decoder output: the index of the first
// point whose flag logit is positive (at least 1).
std::size_t PredictedLength(const Value& raw, std::size_t channels, std::size_t segment_len);

// Objective on raw decoder output [S x L*(C+1)] (normalized space). Only the
// first `length` points count; the channels an objective reads are
// denormalized with `stats` first. Throws SchemaMismatchError naming the
// missing channel kind.
Value ObjectiveValue(const Objective& obj, const Value& raw, const ChannelSchema& schema,
                     const NormStats& stats, std::size_t segment_len, std::size_t length);

struct OptimOptions {
  std::size_t max_iters = 200;
  double lr = 0.05;
  // heavy-ball coefficient; 0 is plain gradient descent
  double momentum = 0.0;
  double grad_tol = 1e-5;
  double improve_tol = 1e-8;
  std::size_t patience = 10;
  // precision the frozen model is evaluated in
  DType dtype = DType::kFloat64;
};

struct OptimStep {
  std::vector<double> params;
  double objective = 0.0;
  double grad_norm = 0.0;
};

struct OptimTrace {
  std::vector<OptimStep> steps;
  std::vector<double> final_params;
  bool converged = false;
  // set when a non-finite objective or gradient stopped the run
  bool aborted = false;
  std::string stop_reason;
};

// Differentiable objective through plan -> embeddings -> encoder -> free
// decode, with the model and image frozen.
class SkillObjective {
 public:
  SkillObjective(const Checkpoint& ckpt, const EnvImage& image, SkillKind kind,
                 const Objective& obj, DType dtype);

  struct Result {
    double value = 0.0;
    std::vector<double> grad;
    std::size_t length = 0;
  };
  // length 0 selects the predicted length at `params`
  Result Evaluate(std::span<const double> params, std::size_t length = 0) const;
  double ValueAt(std::span<const double> params, std::size_t length) const;

  // Predicted trajectory (denormalized) at `params`.
  Trajectory Predict(std::span<const double> params) const;

  const FusionModel& model() const { return model_; }

 private:
  Value Forward(const Value& p, std::size_t* length) const;

  FusionModel model_;
  NormStats stats_;
  SkillKind kind_;
  Objective obj_;
  EnvImage image_;
  Value patches_;
  std::size_t grid_h_ = 0;
  std::size_t grid_w_ = 0;
};

// Projected gradient descent on skill parameters. Stopping rules are checked
// once at least `patience` iterations have run.
OptimTrace Optimize(const Checkpoint& ckpt, const EnvImage& image, const SkillInstance& init,
                    const Objective& obj, const OptimOptions& options = {});

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::vector<std::vector<double>> points;
  std::vector<std::vector<double>> analytic;
  std::vector<std::vector<double>> numeric;
};

// Analytic gradient vs central differences at random in-bounds points, in
// 64-bit. The predicted length is frozen at each base point. Relative error
// is |a - n|_2 / max(|a|_2, |n|_2), 0 when both vanish.
GradCheckResult GradCheck(const Checkpoint& ckpt, const EnvImage& image, SkillKind kind,
                          const Objective& obj, std::uint64_t seed, std::size_t n_points = 5,
                          double step = 1e-4);

// CSV: iter,objective,grad_norm,p0..p{P-1}
void WriteTraceCsv(std::ostream& os, const OptimTrace& trace);
// one JSON object per iteration
void WriteTraceJsonl(std::ostream& os, const OptimTrace& trace);

}  // namespace trajfuse

#endif  // TRAJFUSE_OPTIMIZER_H_
