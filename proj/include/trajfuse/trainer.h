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


#ifndef TRAJFUSE_TRAINER_H_
#define TRAJFUSE_TRAINER_H_

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajfuse/checkpoint.h"
#include "trajfuse/dataset.h"
#include "trajfuse/model.h"

namespace trajfuse {

// Raised when a model, checkpoint, or objective does not fit a dataset's
// channel schema or parameter dimension.
class SchemaMismatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when training produces a non-finite loss.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, std::uint64_t batch_seed);
  std::size_t step;
  std::uint64_t batch_seed;
};

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t steps = 2000;
  double lr = 1e-3;
  std::size_t warmup_steps = 100;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  double lambda_chan = 1.0;
  double lambda_flag = 1.0;
  // 0 disables periodic evaluation
  std::size_t eval_interval = 0;
  // records (from the start of the training set) used by periodic evaluation
  std::size_t eval_records = 32;
  std::size_t log_interval = 50;

  // throws std::invalid_argument
  void Validate() const;
};

struct EvalReport {
  std::vector<std::string> channel_names;
  // denormalized, over the overlapping non-padding prefix
  std::vector<double> channel_rmse;
  double pose_rmse = 0.0;
  double mean_length_error = 0.0;
  double exact_length_fraction = 0.0;
  bool has_success = false;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t count = 0;

  nlohmann::json ToJson() const;
  std::string Table() const;
  bool operator==(const EvalReport&) const = default;
};

// Normalized, segmented view of a dataset ready for batching.
struct PreparedData {
  NormStats stats;
  std::size_t sim_segments = 0;
  std::size_t target_segments = 0;
  std::vector<Matrix> sim;                        // sim_segments x width
  std::vector<std::vector<std::uint8_t>> sim_mask;
  std::vector<Matrix> targets;                    // target_segments x width
  const Dataset* dataset = nullptr;
};

// Target trajectories are padded to whole segments plus one all-padding
// segment, so every target ends with a terminating segment.
PreparedData Prepare(const Dataset& ds, const NormStats& stats,
                     std::size_t segment_len = kSegmentLength);

struct Batch {
  EncoderInput input;
  Matrix targets;  // [batch*target_segments x width]
};

Batch MakeBatch(const PreparedData& data, std::span<const std::size_t> indices, DType dtype);

struct LossTerms {
  Value total;
  double channel = 0.0;
  double flag = 0.0;
};

// lambda_chan * MSE over channel entries of non-padding target points +
// lambda_flag * mean BCE over all flag logits. raw and targets are
// [rows x L*(C+1)]; targets carry flags in {0, 1}.
LossTerms Loss(const Value& raw, const Matrix& targets, std::size_t channels,
               std::size_t segment_len, double lambda_chan = 1.0, double lambda_flag = 1.0);

LossTerms BatchLoss(const FusionModel& model, const Batch& batch, const TrainConfig& config);

// Throws SchemaMismatchError when the dataset does not fit the model config.
void CheckCompatible(const ModelConfig& config, const Dataset& ds);

// Deterministic given config.seed. Each log record is one JSON object per line.
Checkpoint Train(const ModelConfig& model_config, const TrainConfig& config, const Dataset& ds,
                 std::ostream* log = nullptr);

// Autoregressive predictions; targets are never read.
std::vector<Trajectory> PredictAll(const FusionModel& model, const NormStats& stats,
                                   const Dataset& ds);
EvalReport Evaluate(const FusionModel& model, const NormStats& stats, const Dataset& ds);
EvalReport Evaluate(const Checkpoint& ckpt, const Dataset& ds);
// metrics of given predictions against the dataset's executions
EvalReport Score(std::span<const Trajectory> predictions, const Dataset& ds);

// mean predicted success over the final points > 0.5
bool PredictedSuccess(const Trajectory& pred);

}  // namespace trajfuse

#endif  // TRAJFUSE_TRAINER_H_
