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


#ifndef TRAJFUSE_RUN_CONFIG_H_
#define TRAJFUSE_RUN_CONFIG_H_

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "trajfuse/model.h"
#include "trajfuse/optimizer.h"
#include "trajfuse/skill_world.h"
#include "trajfuse/trainer.h"

namespace trajfuse {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Run configuration, a TOML subset:
//
//   kind = "grasp"            # or "reach"
//   with_force = false
//   [model]    d_model, n_enc_layers, n_dec_layers, n_heads, max_segments,
//              pos_grid, ffn_mult
//   [train]    batch_size, steps, lr, warmup_steps, clip_norm, seed,
//              lambda_chan, lambda_flag, eval_interval, eval_records,
//              log_interval
//   [optimize] objective, max_iters, lr, momentum, grad_tol, improve_tol,
//              patience, r_max, force_limit, success_coupling, target_x,
//              target_y, dtype
//
// Unknown keys and malformed values raise ConfigError.
struct RunConfig {
  SkillKind kind = SkillKind::kPlanarGrasp;
  bool with_force = false;
  ModelConfig model;
  TrainConfig train;
  Objective objective;
  OptimOptions optimize;

  // model config with the schema and parameter count of the skill filled in
  ModelConfig ResolvedModel() const;
};

RunConfig ParseRunConfig(std::istream& is);
RunConfig LoadRunConfig(const std::filesystem::path& path);
// every key, in a form ParseRunConfig reads back to the same config
std::string ToToml(const RunConfig& config);

}  // namespace trajfuse

#endif  // TRAJFUSE_RUN_CONFIG_H_
