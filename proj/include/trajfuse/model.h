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

#ifndef TRAJFUSE_MODEL_H_
#define TRAJFUSE_MODEL_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "trajfuse/param_store.h"
#include "trajfuse/tensor.h"
#include "trajfuse/trajectory.h"
#include "trajfuse/vision.h"

namespace trajfuse {

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_enc_layers = 2;
  std::size_t n_dec_layers = 2;
  std::size_t n_heads = 4;
  std::size_t segment_len = kSegmentLength;
  std::size_t param_dim = 2;
  ChannelSchema schema;
  // bounds both the simulated input and the number of decode steps
  std::size_t max_segments = 6;
  std::size_t pos_grid = 8;
  std::size_t ffn_mult = 4;

  std::size_t channels() const { return schema.size(); }
  std::size_t segment_width() const { return segment_len * (schema.size() + 1); }
  // throws std::invalid_argument
  void Validate() const;
};

enum class TokenType : std::uint8_t { kSimTraj = 0, kParams = 1, kImage = 2 };

// Fused encoder input. Token layout per item is
// [trajectory segments, parameter token, image patches].
struct TokenSequence {
  Value tokens;                     // [batch*length x d_model]
  std::vector<std::uint8_t> attn_mask;  // batch*length
  std::vector<TokenType> token_type;    // length (shared by the batch)
  std::vector<std::size_t> position;    // length; restarts per modality
  std::size_t batch = 0;
  std::size_t length = 0;
};

// A batch of encoder inputs with a common number of segments and image size.
struct EncoderInput {
  Value sim_segments;                  // [batch*segments x segment_width]
  std::vector<std::uint8_t> seg_mask;  // batch*segments
  Value params;                        // [batch x param_dim]
  Value patches;                       // [batch*grid_h*grid_w x 768]
  std::size_t batch = 0;
  std::size_t segments = 0;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
};

struct Encoded {
  Value hidden;  // [batch*length x d_model]
  std::vector<std::uint8_t> mask;
  std::size_t batch = 0;
  std::size_t length = 0;
};

// Builds a single-item encoder input. The simulated trajectory must already
// be normalized; it is padded to whole segments here.
EncoderInput MakeEncoderInput(const Trajectory& normalized_sim, const Value& params,
                              const EnvImage& image);

class FusionModel {
 public:
  FusionModel(ModelConfig config, ParamStore params);

  // randomly initialized weights
  static FusionModel Create(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }
  DType dtype() const;

  // one token per parameter vector: [batch x P] -> [batch x d_model]
  Value EmbedParams(const Value& p) const;
  TokenSequence Embed(const EncoderInput& input) const;
  Encoded Encode(const EncoderInput& input) const;

  // Runs the decoder over `inputs` ([batch*steps x width], first row of each
  // item is the start segment) and returns the raw head output for every
  // position: channel values in normalized space followed by flag logits.
  Value Decode(const Encoded& enc, const Value& inputs) const;

  // Teacher-forced pass: decoder inputs are the start segment followed by
  // targets shifted right by one. targets is [batch*S x width].
  Value DecodeTeacherForced(const Encoded& enc, const Value& targets) const;

  // Next segment given the segments produced so far (single item).
  // prev is [k x width] (or undefined for k = 0); returns [1 x width].
  Value DecodeStep(const Encoded& enc, const Value& prev) const;

  // Autoregressive decode of exactly `steps` segments with every fed-back
  // segment attached to the graph (single item). Returns raw outputs
  // [steps x width].
  Value DecodeFree(const Encoded& enc, std::size_t steps) const;

  // Full inference on raw (unnormalized) inputs.
  Trajectory Predict(const Trajectory& sim, std::span<const double> params,
                     const EnvImage& image, const NormStats& stats,
                     std::size_t max_segments) const;
  Trajectory Predict(const Trajectory& sim, std::span<const double> params,
                     const EnvImage& image, const NormStats& stats) const {
    return Predict(sim, params, image, stats, config_.max_segments);
  }

  // converts a raw output row block into decoder-input form (flag logits
  // replaced by probabilities)
  Value ToFeedback(const Value& raw) const;

 private:
  Value Block(const std::string& prefix, const Value& x, const Encoded* cross,
              std::size_t batch, std::span<const std::uint8_t> self_mask, bool causal) const;
  Value Ffn(const std::string& prefix, const Value& x) const;
  Value Ln(const std::string& prefix, const Value& x) const;
  Value Constant(const Shape& shape, std::span<const double> values) const;
  const Value& P(const std::string& name) const { return params_.Get(name); }

  ModelConfig config_;
  ParamStore params_;
};

// Builds the zero start segment followed by each item's first S-1 targets.
Matrix ShiftRight(const Matrix& targets, std::size_t batch);

}  // namespace trajfuse

#endif  // TRAJFUSE_MODEL_H_
