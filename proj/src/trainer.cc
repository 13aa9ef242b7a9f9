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


#include "trajfuse/trainer.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "trajfuse/random.h"

namespace trajfuse {
namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

Value MatrixValue(const Matrix& m, DType dtype) {
  return Value::FromVector(
      {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
      std::span<const double>(m.data(), static_cast<std::size_t>(m.size())), false, dtype);
}

Matrix Stack(const std::vector<const Matrix*>& parts) {
  Eigen::Index rows = 0;
  for (const Matrix* p : parts) rows += p->rows();
  Matrix out(rows, parts.front()->cols());
  Eigen::Index r = 0;
  for (const Matrix* p : parts) {
    out.middleRows(r, p->rows()) = *p;
    r += p->rows();
  }
  return out;
}

Matrix SegmentsOf(const Trajectory& t, std::size_t segments, std::size_t segment_len) {
  Trajectory padded = PadTo(t, segments * segment_len);
  return Segment(std::span<const Trajectory>(&padded, 1), segment_len).segments[0];
}

std::string Fixed(double v, int precision) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

struct Adam {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t t = 0;
};

}  // namespace

TrainingDiverged::TrainingDiverged(std::size_t step_, std::uint64_t batch_seed_)
    : std::runtime_error("non-finite loss at step " + std::to_string(step_) + " (batch seed " +
                         std::to_string(batch_seed_) + ")"),
      step(step_),
      batch_seed(batch_seed_) {}

void TrainConfig::Validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be >= 0");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be positive");
  if (!(lambda_chan >= 0.0) || !(lambda_flag >= 0.0)) {
    throw std::invalid_argument("loss weights must be non-negative");
  }
  if (log_interval == 0) throw std::invalid_argument("log_interval must be positive");
}

nlohmann::json EvalReport::ToJson() const {
  nlohmann::json rmse = nlohmann::json::object();
  for (std::size_t i = 0; i < channel_names.size(); ++i) rmse[channel_names[i]] = channel_rmse[i];
  nlohmann::json j = {{"count", count},
                      {"channel_rmse", rmse},
                      {"pose_rmse", pose_rmse},
                      {"mean_length_error", mean_length_error},
                      {"exact_length_fraction", exact_length_fraction}};
  if (has_success) {
    j["precision"] = precision;
    j["recall"] = recall;
    j["f1"] = f1;
  }
  return j;
}

std::string EvalReport::Table() const {
  std::ostringstream os;
  os << "records              " << count << "\n";
  for (std::size_t i = 0; i < channel_names.size(); ++i) {
    os << "rmse " << std::left << std::setw(16) << channel_names[i] << Fixed(channel_rmse[i], 6)
       << "\n";
  }
  os << "pose rmse            " << Fixed(pose_rmse, 6) << "\n";
  os << "length error (mean)  " << Fixed(mean_length_error, 3) << "\n";
  os << "exact length         " << Fixed(exact_length_fraction, 3) << "\n";
  if (has_success) {
    os << "success precision    " << Fixed(precision, 3) << "\n";
    os << "success recall       " << Fixed(recall, 3) << "\n";
    os << "success f1           " << Fixed(f1, 3) << "\n";
  }
  return os.str();
}

void CheckCompatible(const ModelConfig& config, const Dataset& ds) {
  if (config.schema != ds.schema) {
    throw SchemaMismatchError("model schema " + SchemaString(config.schema) +
                              " does not match dataset schema " + SchemaString(ds.schema));
  }
  if (config.param_dim != ds.param_dim) {
    throw SchemaMismatchError("model expects " + std::to_string(config.param_dim) +
                              " skill parameters, dataset has " +
                              std::to_string(ds.param_dim));
  }
}

PreparedData Prepare(const Dataset& ds, const NormStats& stats, std::size_t segment_len) {
  if (ds.records.empty()) throw std::invalid_argument("dataset is empty");
  PreparedData out;
  out.stats = stats;
  out.dataset = &ds;
  std::size_t max_sim = 0, max_exec = 0;
  for (const Record& r : ds.records) {
    max_sim = std::max(max_sim, r.plan.length());
    max_exec = std::max(max_exec, r.exec.length());
  }
  out.sim_segments = NumSegments(max_sim, segment_len);
  out.target_segments = NumSegments(max_exec, segment_len) + 1;
  for (const Record& r : ds.records) {
    Matrix sim = SegmentsOf(Normalize(r.plan, stats), out.sim_segments, segment_len);
    out.sim_mask.push_back(SegmentMask(sim, ds.schema.size(), segment_len));
    out.sim.push_back(std::move(sim));
    out.targets.push_back(
        SegmentsOf(Normalize(r.exec, stats), out.target_segments, segment_len));
  }
  return out;
}

Batch MakeBatch(const PreparedData& data, std::span<const std::size_t> indices, DType dtype) {
  const Dataset& ds = *data.dataset;
  std::vector<const Matrix*> sims, targets;
  std::vector<double> params;
  std::vector<Matrix> patches;
  Batch b;
  for (std::size_t i : indices) {
    sims.push_back(&data.sim[i]);
    targets.push_back(&data.targets[i]);
    const auto& m = data.sim_mask[i];
    b.input.seg_mask.insert(b.input.seg_mask.end(), m.begin(), m.end());
    params.insert(params.end(), ds.records[i].params.begin(), ds.records[i].params.end());
    patches.push_back(Patchify(ds.records[i].image));
  }
  std::vector<const Matrix*> patch_ptrs;
  for (const Matrix& p : patches) patch_ptrs.push_back(&p);
  b.input.sim_segments = MatrixValue(Stack(sims), dtype);
  b.input.params = Value::FromVector({indices.size(), ds.param_dim}, params, false, dtype);
  b.input.patches = MatrixValue(Stack(patch_ptrs), dtype);
  b.input.batch = indices.size();
  b.input.segments = data.sim_segments;
  b.input.grid_h = ds.records[indices[0]].image.grid_h();
  b.input.grid_w = ds.records[indices[0]].image.grid_w();
  b.targets = Stack(targets);
  return b;
}

LossTerms Loss(const Value& raw, const Matrix& targets, std::size_t channels,
               std::size_t segment_len, double lambda_chan, double lambda_flag) {
  const std::size_t lc = segment_len * channels;
  const std::size_t width = lc + segment_len;
  if (raw.rank() != 2 || raw.cols() != width || raw.rows() != static_cast<std::size_t>(targets.rows()) ||
      static_cast<std::size_t>(targets.cols()) != width) {
    throw DimensionError("loss: prediction " + ShapeString(raw.shape()) + " and target [" +
                         std::to_string(targets.rows()) + " x " +
                         std::to_string(targets.cols()) + "] do not align");
  }
  const std::size_t rows = raw.rows();
  std::vector<double> chan_target(rows * lc), weight(rows * lc), flags(rows * segment_len);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t p = 0; p < segment_len; ++p) {
      const double f = targets(r, lc + p);
      flags[r * segment_len + p] = f;
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t k = p * channels + c;
        chan_target[r * lc + k] = targets(r, k);
        weight[r * lc + k] = f > 0.5 ? 0.0 : 1.0;
      }
    }
  }
  Value chan = MaskedMse(SliceCols(raw, 0, lc), chan_target, weight);
  Value flag = BceWithLogits(SliceCols(raw, lc, segment_len), flags);
  LossTerms out;
  out.total = Add(Scale(chan, lambda_chan), Scale(flag, lambda_flag));
  out.channel = chan.item();
  out.flag = flag.item();
  return out;
}

LossTerms BatchLoss(const FusionModel& model, const Batch& batch, const TrainConfig& config) {
  Encoded enc = model.Encode(batch.input);
  Value raw = model.DecodeTeacherForced(enc, MatrixValue(batch.targets, model.dtype()));
  return Loss(raw, batch.targets, model.config().channels(), model.config().segment_len,
              config.lambda_chan, config.lambda_flag);
}

Checkpoint Train(const ModelConfig& model_config, const TrainConfig& config, const Dataset& ds,
                 std::ostream* log) {
  config.Validate();
  CheckCompatible(model_config, ds);
  const std::vector<Trajectory> execs = ds.Executions();
  const NormStats stats = ComputeStats(execs);
  const PreparedData data = Prepare(ds, stats, model_config.segment_len);
  if (data.target_segments > model_config.max_segments) {
    throw std::invalid_argument("executed trajectories need " +
                                std::to_string(data.target_segments) +
                                " decoder segments, max_segments is " +
                                std::to_string(model_config.max_segments));
  }
  FusionModel model = FusionModel::Create(model_config, HashCombine(config.seed, 1));
  auto& entries = model.params().entries();
  Adam adam;
  for (const auto& [name, v] : entries) {
    adam.m.emplace_back(v.size(), 0.0);
    adam.v.emplace_back(v.size(), 0.0);
  }
  const std::size_t n = ds.records.size();
  const std::size_t bs = std::min(config.batch_size, n);
  std::vector<std::size_t> order(n);
  std::size_t cursor = n;
  std::size_t epoch = 0;
  std::uint64_t epoch_seed = 0;
  std::vector<std::vector<double>> grads(entries.size());
  const Dataset eval_set = ds.Subset(0, std::min(config.eval_records, n));

  for (std::size_t step = 0; step < config.steps; ++step) {
    if (cursor + bs > n) {
      epoch_seed = HashCombine(config.seed, 0x65706f6368ull + epoch++);
      Rng rng(epoch_seed);
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.Index(i)]);
      cursor = 0;
    }
    const std::uint64_t batch_seed = HashCombine(epoch_seed, cursor);
    Batch batch =
        MakeBatch(data, std::span<const std::size_t>(order.data() + cursor, bs), model.dtype());
    cursor += bs;

    model.params().ZeroGrad();
    LossTerms loss = BatchLoss(model, batch, config);
    const double value = loss.total.item();
    if (!std::isfinite(value)) throw TrainingDiverged(step, batch_seed);
    Backward(loss.total);

    double sq = 0.0;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      grads[i] = entries[i].second.GradVector();
      for (double g : grads[i]) sq += g * g;
    }
    const double grad_norm = std::sqrt(sq);
    const double clip = grad_norm > config.clip_norm ? config.clip_norm / grad_norm : 1.0;
    const double lr =
        config.warmup_steps > 0
            ? config.lr * std::min(1.0, static_cast<double>(step + 1) /
                                            static_cast<double>(config.warmup_steps))
            : config.lr;
    ++adam.t;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(adam.t));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(adam.t));
    for (std::size_t i = 0; i < entries.size(); ++i) {
      Value& w = entries[i].second;
      std::vector<double> data_vec = w.ToVector();
      auto& m = adam.m[i];
      auto& v = adam.v[i];
      for (std::size_t k = 0; k < data_vec.size(); ++k) {
        const double g = grads[i][k] * clip;
        m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * g;
        v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * g * g;
        data_vec[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + kAdamEps);
      }
      w.Assign(data_vec);
    }

    const bool last = step + 1 == config.steps;
    if (log != nullptr && (step % config.log_interval == 0 || last)) {
      nlohmann::json rec = {{"step", step},       {"loss", value},
                            {"channel_loss", loss.channel}, {"flag_loss", loss.flag},
                            {"lr", lr},           {"grad_norm", grad_norm}};
      *log << rec.dump() << "\n";
    }
    if (log != nullptr && config.eval_interval > 0 &&
        ((step + 1) % config.eval_interval == 0 || last)) {
      nlohmann::json rec = {{"step", step}, {"eval", Evaluate(model, stats, eval_set).ToJson()}};
      *log << rec.dump() << "\n";
    }
    if (log != nullptr) log->flush();
  }
  model.params().ZeroGrad();
  Checkpoint ck;
  ck.config = model_config;
  ck.stats = stats;
  ck.task = SkillKindName(ds.kind);
  ck.params = model.params().Clone();
  return ck;
}

bool PredictedSuccess(const Trajectory& pred) {
  const auto sc = ChannelsOfKind(pred.schema, ChannelKind::kSuccess);
  if (sc.empty() || !pred.valid) return false;
  const std::size_t n = pred.real_length();
  if (n == 0) return false;
  const std::size_t k = std::min(n, kSuccessWindow);
  double acc = 0.0;
  for (std::size_t i = n - k; i < n; ++i) acc += pred.points(static_cast<Eigen::Index>(i), sc[0]);
  return acc / static_cast<double>(k) > 0.5;
}

std::vector<Trajectory> PredictAll(const FusionModel& model, const NormStats& stats,
                                   const Dataset& ds) {
  CheckCompatible(model.config(), ds);
  std::vector<Trajectory> out;
  out.reserve(ds.records.size());
  for (const Record& r : ds.records) {
    out.push_back(model.Predict(r.plan, r.params, r.image, stats));
  }
  return out;
}

EvalReport Score(std::span<const Trajectory> predictions, const Dataset& ds) {
  if (ds.records.empty()) throw std::invalid_argument("evaluate: empty dataset");
  if (predictions.size() != ds.records.size()) {
    throw std::invalid_argument("evaluate: prediction count does not match dataset");
  }
  const std::size_t c = ds.schema.size();
  EvalReport rep;
  rep.count = ds.records.size();
  for (const Channel& ch : ds.schema) rep.channel_names.push_back(ch.name);
  std::vector<double> sq(c, 0.0);
  double points = 0.0, length_err = 0.0;
  std::size_t exact = 0, tp = 0, fp = 0, fn = 0;
  const auto success = ChannelsOfKind(ds.schema, ChannelKind::kSuccess);
  rep.has_success = !success.empty();
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const Trajectory& pred = predictions[i];
    const Trajectory& truth = ds.records[i].exec;
    const std::size_t pred_len = pred.valid ? pred.real_length() : 0;
    const std::size_t true_len = truth.real_length();
    const std::size_t overlap = std::min(pred_len, true_len);
    for (std::size_t t = 0; t < overlap; ++t) {
      for (std::size_t j = 0; j < c; ++j) {
        const double d = pred.points(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) -
                         truth.points(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j));
        sq[j] += d * d;
      }
    }
    points += static_cast<double>(overlap);
    const std::size_t err = pred_len > true_len ? pred_len - true_len : true_len - pred_len;
    length_err += static_cast<double>(err);
    exact += err == 0 ? 1 : 0;
    if (rep.has_success) {
      const bool actual =
          truth.points(static_cast<Eigen::Index>(true_len - 1), success[0]) > 0.5;
      const bool guess = PredictedSuccess(pred);
      tp += actual && guess;
      fp += !actual && guess;
      fn += actual && !guess;
    }
  }
  rep.channel_rmse.resize(c);
  double pose_sq = 0.0;
  std::size_t pose_channels = 0;
  for (std::size_t j = 0; j < c; ++j) {
    rep.channel_rmse[j] = points > 0 ? std::sqrt(sq[j] / points) : 0.0;
    if (ds.schema[j].kind == ChannelKind::kPose) {
      pose_sq += sq[j];
      ++pose_channels;
    }
  }
  rep.pose_rmse =
      points > 0 && pose_channels > 0 ? std::sqrt(pose_sq / (points * pose_channels)) : 0.0;
  rep.mean_length_error = length_err / static_cast<double>(rep.count);
  rep.exact_length_fraction = static_cast<double>(exact) / static_cast<double>(rep.count);
  if (rep.has_success) {
    // no positives and no predicted positives counts as perfect agreement
    rep.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : (fn == 0 ? 1.0 : 0.0);
    rep.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : (fp == 0 ? 1.0 : 0.0);
    rep.f1 = tp + fp + fn > 0 ? 2.0 * tp / (2.0 * tp + fp + fn) : 1.0;
  }
  return rep;
}

EvalReport Evaluate(const FusionModel& model, const NormStats& stats, const Dataset& ds) {
  if (ds.records.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const auto preds = PredictAll(model, stats, ds);
  return Score(preds, ds);
}

EvalReport Evaluate(const Checkpoint& ckpt, const Dataset& ds) {
  return Evaluate(ckpt.Model(), ckpt.stats, ds);
}

}  // namespace trajfuse
