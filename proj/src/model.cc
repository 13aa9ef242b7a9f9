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

#include "trajfuse/model.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace trajfuse {

void ModelConfig::Validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw std::invalid_argument("d_model " + std::to_string(d_model) +
                                " must be a positive multiple of n_heads " +
                                std::to_string(n_heads));
  }
  if (segment_len == 0) throw std::invalid_argument("segment_len must be positive");
  if (max_segments < 1) throw std::invalid_argument("max_segments must be at least 1");
  if (schema.empty()) throw std::invalid_argument("channel schema is empty");
  if (param_dim == 0) throw std::invalid_argument("param_dim must be positive");
  if (pos_grid == 0) throw std::invalid_argument("pos_grid must be positive");
  if (ffn_mult == 0) throw std::invalid_argument("ffn_mult must be positive");
}

EncoderInput MakeEncoderInput(const Trajectory& normalized_sim, const Value& params,
                              const EnvImage& image) {
  const DType dtype = params.dtype();
  const std::size_t padded_len =
      NumSegments(normalized_sim.length(), kSegmentLength) * kSegmentLength;
  Trajectory padded = PadTo(normalized_sim, padded_len);
  SegmentBatch seg = Segment(std::span<const Trajectory>(&padded, 1));
  EncoderInput in;
  const Matrix& m = seg.segments[0];
  in.sim_segments =
      Value::FromVector({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                        std::span<const double>(m.data(), static_cast<std::size_t>(m.size())),
                        false, dtype);
  in.seg_mask = seg.seg_mask[0];
  in.params = params.rank() == 1 ? Reshape(params, {1, params.size()}) : params;
  Matrix patches = Patchify(image);
  in.patches = Value::FromVector(
      {static_cast<std::size_t>(patches.rows()), kPatchWidth},
      std::span<const double>(patches.data(), static_cast<std::size_t>(patches.size())), false,
      dtype);
  in.batch = 1;
  in.segments = static_cast<std::size_t>(m.rows());
  in.grid_h = image.grid_h();
  in.grid_w = image.grid_w();
  return in;
}

Matrix ShiftRight(const Matrix& targets, std::size_t batch) {
  if (batch == 0 || targets.rows() % static_cast<Eigen::Index>(batch) != 0) {
    throw std::invalid_argument("shift_right: rows not divisible by batch");
  }
  const Eigen::Index s = targets.rows() / static_cast<Eigen::Index>(batch);
  Matrix out = Matrix::Zero(targets.rows(), targets.cols());
  for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(batch); ++b) {
    for (Eigen::Index i = 1; i < s; ++i) out.row(b * s + i) = targets.row(b * s + i - 1);
  }
  return out;
}

FusionModel::FusionModel(ModelConfig config, ParamStore params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.Validate();
}

FusionModel FusionModel::Create(const ModelConfig& config, std::uint64_t seed) {
  config.Validate();
  Rng rng(seed);
  const std::size_t d = config.d_model;
  const std::size_t w = config.segment_width();
  const std::size_t ff = config.ffn_mult * d;
  ParamStore ps;
  auto zeros = [](std::size_t n) { return Value::Zeros({n}, true); };
  auto ones = [](std::size_t n) {
    std::vector<double> v(n, 1.0);
    return Value::FromVector({n}, v, true);
  };
  auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
    ps.Add(name + ".w", GlorotUniform(in, out, rng));
    ps.Add(name + ".b", zeros(out));
  };
  auto norm = [&](const std::string& name) {
    ps.Add(name + ".g", ones(d));
    ps.Add(name + ".b", zeros(d));
  };

  linear("traj.proj", w, d);
  linear("params.proj", config.param_dim, d);
  linear("image.proj", kPatchWidth, d);
  ps.Add("pos.traj", NormalInit({config.max_segments, d}, 0.02, rng));
  ps.Add("pos.params", NormalInit({1, d}, 0.02, rng));
  ps.Add("pos.image", NormalInit({config.pos_grid * config.pos_grid, d}, 0.02, rng));
  ps.Add("type", NormalInit({3, d}, 0.02, rng));
  ps.Add("dec.pos", NormalInit({config.max_segments, d}, 0.02, rng));
  for (std::size_t l = 0; l < config.n_enc_layers; ++l) {
    const std::string p = "enc." + std::to_string(l);
    norm(p + ".ln1");
    linear(p + ".attn.qkv", d, 3 * d);
    linear(p + ".attn.out", d, d);
    norm(p + ".ln2");
    linear(p + ".ffn.in", d, ff);
    linear(p + ".ffn.out", ff, d);
  }
  norm("enc.ln_f");
  for (std::size_t l = 0; l < config.n_dec_layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    norm(p + ".ln1");
    linear(p + ".attn.qkv", d, 3 * d);
    linear(p + ".attn.out", d, d);
    norm(p + ".ln_cross");
    linear(p + ".cross.q", d, d);
    linear(p + ".cross.kv", d, 2 * d);
    linear(p + ".cross.out", d, d);
    norm(p + ".ln2");
    linear(p + ".ffn.in", d, ff);
    linear(p + ".ffn.out", ff, d);
  }
  norm("dec.ln_f");
  linear("head", d, w);
  return FusionModel(config, std::move(ps));
}

DType FusionModel::dtype() const { return P("head.w").dtype(); }

Value FusionModel::Constant(const Shape& shape, std::span<const double> values) const {
  return Value::FromVector(shape, values, false, dtype());
}

Value FusionModel::Ln(const std::string& prefix, const Value& x) const {
  return LayerNorm(x, P(prefix + ".g"), P(prefix + ".b"));
}

Value FusionModel::Ffn(const std::string& prefix, const Value& x) const {
  Value h = Gelu(Linear(x, P(prefix + ".ffn.in.w"), P(prefix + ".ffn.in.b")));
  return Linear(h, P(prefix + ".ffn.out.w"), P(prefix + ".ffn.out.b"));
}

// pre-norm block: self-attention, optional cross-attention, feed-forward
Value FusionModel::Block(const std::string& prefix, const Value& x, const Encoded* cross,
                         std::size_t batch, std::span<const std::uint8_t> self_mask,
                         bool causal) const {
  const std::size_t d = config_.d_model;
  Value h = Ln(prefix + ".ln1", x);
  Value qkv = Linear(h, P(prefix + ".attn.qkv.w"), P(prefix + ".attn.qkv.b"));
  Value a = Attention(SliceCols(qkv, 0, d), SliceCols(qkv, d, d), SliceCols(qkv, 2 * d, d),
                      config_.n_heads, batch, self_mask, causal);
  Value out = Add(x, Linear(a, P(prefix + ".attn.out.w"), P(prefix + ".attn.out.b")));
  if (cross != nullptr) {
    Value hc = Ln(prefix + ".ln_cross", out);
    Value q = Linear(hc, P(prefix + ".cross.q.w"), P(prefix + ".cross.q.b"));
    Value kv = Linear(cross->hidden, P(prefix + ".cross.kv.w"), P(prefix + ".cross.kv.b"));
    Value c = Attention(q, SliceCols(kv, 0, d), SliceCols(kv, d, d), config_.n_heads, batch,
                        cross->mask, false);
    out = Add(out, Linear(c, P(prefix + ".cross.out.w"), P(prefix + ".cross.out.b")));
  }
  return Add(out, Ffn(prefix, Ln(prefix + ".ln2", out)));
}

Value FusionModel::EmbedParams(const Value& p) const {
  if (p.rank() != 2 || p.cols() != config_.param_dim) {
    throw DimensionError("embed_params: expected [batch x " + std::to_string(config_.param_dim) +
                         "], got " + ShapeString(p.shape()));
  }
  for (double v : p.ToVector()) {
    if (!std::isfinite(v)) throw std::invalid_argument("embed_params: non-finite parameter");
  }
  return Linear(p, P("params.proj.w"), P("params.proj.b"));
}

TokenSequence FusionModel::Embed(const EncoderInput& in) const {
  const std::size_t b = in.batch, s = in.segments;
  const std::size_t n_img = in.grid_h * in.grid_w;
  if (s > config_.max_segments) {
    throw std::invalid_argument("simulated trajectory has " + std::to_string(s) +
                                " segments, model accepts at most " +
                                std::to_string(config_.max_segments) + " (" +
                                std::to_string(config_.max_segments * config_.segment_len) +
                                " points)");
  }
  if (s == 0 || in.sim_segments.rows() != b * s ||
      in.sim_segments.cols() != config_.segment_width()) {
    throw DimensionError("encode: simulated segments " + ShapeString(in.sim_segments.shape()) +
                         " do not match batch " + std::to_string(b) + " x " +
                         std::to_string(s) + " x width " +
                         std::to_string(config_.segment_width()));
  }
  if (in.seg_mask.size() != b * s) throw DimensionError("encode: segment mask size mismatch");
  if (in.params.rows() != b) throw DimensionError("encode: params batch mismatch");

  std::vector<std::size_t> seg_pos(s);
  std::iota(seg_pos.begin(), seg_pos.end(), 0);
  Value traj = EmbedSegments(in.sim_segments, P("traj.proj.w"), P("traj.proj.b"));
  traj = AddTiled(traj, GatherRows(P("pos.traj"), seg_pos));
  Value par = AddTiled(EmbedParams(in.params), P("pos.params"));
  Value img = EmbedPatches(in.patches, P("image.proj.w"), P("image.proj.b"), P("pos.image"),
                           config_.pos_grid, in.grid_h, in.grid_w);
  if (img.rows() != b * n_img) throw DimensionError("encode: patch batch mismatch");

  TokenSequence seq;
  seq.batch = b;
  seq.length = s + 1 + n_img;
  std::vector<std::size_t> order;
  order.reserve(b * seq.length);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < s; ++j) order.push_back(i * s + j);
    order.push_back(b * s + i);
    for (std::size_t j = 0; j < n_img; ++j) order.push_back(b * s + b + i * n_img + j);
    for (std::size_t j = 0; j < s; ++j) seq.attn_mask.push_back(in.seg_mask[i * s + j]);
    seq.attn_mask.push_back(1);
    seq.attn_mask.insert(seq.attn_mask.end(), n_img, 1);
  }
  std::vector<std::size_t> type_rows;
  for (std::size_t j = 0; j < s; ++j) {
    seq.token_type.push_back(TokenType::kSimTraj);
    seq.position.push_back(j);
  }
  seq.token_type.push_back(TokenType::kParams);
  seq.position.push_back(0);
  for (std::size_t j = 0; j < n_img; ++j) {
    seq.token_type.push_back(TokenType::kImage);
    seq.position.push_back(j);
  }
  for (TokenType t : seq.token_type) type_rows.push_back(static_cast<std::size_t>(t));
  Value fused = GatherRows(ConcatRows({traj, par, img}), order);
  seq.tokens = AddTiled(fused, GatherRows(P("type"), type_rows));
  return seq;
}

Encoded FusionModel::Encode(const EncoderInput& in) const {
  TokenSequence seq = Embed(in);
  Value x = seq.tokens;
  for (std::size_t l = 0; l < config_.n_enc_layers; ++l) {
    x = Block("enc." + std::to_string(l), x, nullptr, seq.batch, seq.attn_mask, false);
  }
  Encoded enc;
  enc.hidden = Ln("enc.ln_f", x);
  enc.mask = std::move(seq.attn_mask);
  enc.batch = seq.batch;
  enc.length = seq.length;
  return enc;
}

Value FusionModel::Decode(const Encoded& enc, const Value& inputs) const {
  const std::size_t b = enc.batch;
  if (inputs.rank() != 2 || inputs.cols() != config_.segment_width() || inputs.rows() == 0 ||
      inputs.rows() % b != 0) {
    throw DimensionError("decode: inputs " + ShapeString(inputs.shape()) +
                         " do not match batch " + std::to_string(b) + " and width " +
                         std::to_string(config_.segment_width()));
  }
  const std::size_t steps = inputs.rows() / b;
  if (steps > config_.max_segments) {
    throw std::invalid_argument("decode: " + std::to_string(steps) +
                                " decoder positions exceed max_segments " +
                                std::to_string(config_.max_segments));
  }
  std::vector<std::size_t> pos(steps);
  std::iota(pos.begin(), pos.end(), 0);
  Value x = EmbedSegments(inputs, P("traj.proj.w"), P("traj.proj.b"));
  x = AddTiled(x, GatherRows(P("dec.pos"), pos));
  for (std::size_t l = 0; l < config_.n_dec_layers; ++l) {
    x = Block("dec." + std::to_string(l), x, &enc, b, {}, true);
  }
  return Linear(Ln("dec.ln_f", x), P("head.w"), P("head.b"));
}

Value FusionModel::DecodeTeacherForced(const Encoded& enc, const Value& targets) const {
  const std::vector<double> t = targets.ToVector();
  Matrix m = Eigen::Map<const Matrix>(t.data(), static_cast<Eigen::Index>(targets.rows()),
                                      static_cast<Eigen::Index>(targets.cols()));
  Matrix shifted = ShiftRight(m, enc.batch);
  return Decode(enc, Constant(targets.shape(), std::span<const double>(
                                                   shifted.data(),
                                                   static_cast<std::size_t>(shifted.size()))));
}

Value FusionModel::DecodeStep(const Encoded& enc, const Value& prev) const {
  if (enc.batch != 1) throw std::invalid_argument("decode_step: single item only");
  const std::size_t k = prev.defined() ? prev.rows() : 0;
  if (k >= config_.max_segments) {
    throw std::invalid_argument("decode_step: already produced " + std::to_string(k) +
                                " segments, max_segments is " +
                                std::to_string(config_.max_segments));
  }
  Value start = Value::Zeros({1, config_.segment_width()}, false, dtype());
  Value inputs = k == 0 ? start : ConcatRows({start, prev});
  return SliceRows(Decode(enc, inputs), k, 1);
}

Value FusionModel::ToFeedback(const Value& raw) const {
  const std::size_t lc = config_.segment_len * config_.channels();
  return ConcatCols({SliceCols(raw, 0, lc), Sigmoid(SliceCols(raw, lc, config_.segment_len))});
}

Value FusionModel::DecodeFree(const Encoded& enc, std::size_t steps) const {
  if (enc.batch != 1) throw std::invalid_argument("decode_free: single item only");
  if (steps == 0 || steps > config_.max_segments) {
    throw std::invalid_argument("decode_free: steps must be in [1, max_segments]");
  }
  std::vector<Value> inputs{Value::Zeros({1, config_.segment_width()}, false, dtype())};
  std::vector<Value> outputs;
  for (std::size_t s = 0; s < steps; ++s) {
    Value row = SliceRows(Decode(enc, ConcatRows(inputs)), s, 1);
    outputs.push_back(row);
    if (s + 1 < steps) inputs.push_back(ToFeedback(row));
  }
  return ConcatRows(outputs);
}

Trajectory FusionModel::Predict(const Trajectory& sim, std::span<const double> params,
                                const EnvImage& image, const NormStats& stats,
                                std::size_t max_segments) const {
  if (sim.schema != config_.schema) {
    throw std::invalid_argument("predict: simulated trajectory schema " +
                                SchemaString(sim.schema) + " differs from model schema " +
                                SchemaString(config_.schema));
  }
  NoGradGuard no_grad;
  max_segments = std::min(max_segments, config_.max_segments);
  Value p = Value::FromVector({1, params.size()}, params, false, dtype());
  Encoded enc = Encode(MakeEncoderInput(Normalize(sim, stats), p, image));
  const std::size_t w = config_.segment_width();
  const std::size_t flag0 = config_.segment_len * config_.channels();
  Matrix segments(0, static_cast<Eigen::Index>(w));
  Value fed;
  bool terminated = false;
  for (std::size_t step = 0; step < max_segments; ++step) {
    Value fb = ToFeedback(DecodeStep(enc, fed));
    fed = fed.defined() ? ConcatRows({fed, fb}) : fb;
    const std::vector<double> row = fb.ToVector();
    segments.conservativeResize(segments.rows() + 1, Eigen::NoChange);
    for (std::size_t j = 0; j < w; ++j) segments(segments.rows() - 1, j) = row[j];
    bool all_padding = true;
    for (std::size_t j = 0; j < config_.segment_len; ++j) {
      if (!(row[flag0 + j] > 0.5)) {
        all_padding = false;
        break;
      }
    }
    if (all_padding) {
      terminated = true;
      break;
    }
  }
  Trajectory out = UnsegmentOne(segments, config_.schema, sim.dt, &stats, config_.segment_len);
  out.truncated = !terminated;
  return out;
}

}  // namespace trajfuse
