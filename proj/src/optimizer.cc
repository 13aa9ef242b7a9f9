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


#include "trajfuse/optimizer.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

#include "trajfuse/random.h"
#include "trajfuse/trainer.h"

namespace trajfuse {
namespace {

double Norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::size_t RequireChannel(const ChannelSchema& schema, ChannelKind kind, const Objective& obj) {
  const auto idx = ChannelsOfKind(schema, kind);
  if (idx.empty()) {
    throw SchemaMismatchError(std::string("objective ") + ObjectiveKindName(obj.kind) +
                              " needs a " + ChannelKindName(kind) +
                              " channel, schema is " + SchemaString(schema));
  }
  return idx[0];
}

Value SuccessTerm(const Value& points, std::size_t channel) {
  const std::size_t k = std::min(points.rows(), kSuccessWindow);
  Value s = SliceCols(SliceRows(points, points.rows() - k, k), channel, 1);
  return Mean(Square(AddScalar(Scale(s, -1.0), 1.0)));
}

}  // namespace

const char* ObjectiveKindName(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::kReward:
      return "reward";
    case ObjectiveKind::kSuccess:
      return "success";
    case ObjectiveKind::kForceLimit:
      return "force-limit";
    case ObjectiveKind::kTargetPose:
      return "target-pose";
  }
  return "unknown";
}

std::optional<ObjectiveKind> ParseObjectiveKind(const std::string& name) {
  if (name == "reward") return ObjectiveKind::kReward;
  if (name == "success") return ObjectiveKind::kSuccess;
  if (name == "force-limit") return ObjectiveKind::kForceLimit;
  if (name == "target-pose") return ObjectiveKind::kTargetPose;
  return std::nullopt;
}

void Objective::Validate() const {
  if (!std::isfinite(r_max)) throw std::invalid_argument("r_max must be finite");
  if (!(force_limit > 0.0)) throw std::invalid_argument("force_limit must be positive");
  if (!std::isfinite(target[0]) || !std::isfinite(target[1])) {
    throw std::invalid_argument("target pose must be finite");
  }
}

Value Phi(const Value& rewards, double r_max) {
  if (!rewards.defined() || rewards.size() == 0) {
    throw std::invalid_argument("phi: empty reward sequence");
  }
  return Mean(Square(AddScalar(Scale(rewards, -1.0), r_max)));
}

double Phi(std::span<const double> rewards, double r_max) {
  if (rewards.empty()) throw std::invalid_argument("phi: empty reward sequence");
  double acc = 0.0;
  for (double r : rewards) acc += (r_max - r) * (r_max - r);
  return acc / static_cast<double>(rewards.size());
}

std::size_t PredictedLength(const Value& raw, std::size_t channels, std::size_t segment_len) {
  const std::size_t lc = segment_len * channels;
  const std::vector<double> v = raw.ToVector();
  const std::size_t width = raw.cols();
  for (std::size_t s = 0; s < raw.rows(); ++s) {
    for (std::size_t p = 0; p < segment_len; ++p) {
      if (v[s * width + lc + p] > 0.0) return std::max<std::size_t>(1, s * segment_len + p);
    }
  }
  return raw.rows() * segment_len;
}

Value ObjectiveValue(const Objective& obj, const Value& raw, const ChannelSchema& schema,
                     const NormStats& stats, std::size_t segment_len, std::size_t length) {
  const std::size_t c = schema.size();
  const std::size_t lc = segment_len * c;
  if (raw.rank() != 2 || raw.cols() != lc + segment_len) {
    throw DimensionError("objective: raw output " + ShapeString(raw.shape()) +
                         " does not match schema " + SchemaString(schema));
  }
  const std::size_t total = raw.rows() * segment_len;
  length = std::clamp<std::size_t>(length, 1, total);
  Value points = SliceRows(Reshape(SliceCols(raw, 0, lc), {total, c}), 0, length);
  points = ColumnAffine(points, stats.std, stats.mean);
  switch (obj.kind) {
    case ObjectiveKind::kReward: {
      const std::size_t rc = RequireChannel(schema, ChannelKind::kReward, obj);
      return Phi(SliceCols(points, rc, 1), obj.r_max);
    }
    case ObjectiveKind::kSuccess:
      return SuccessTerm(points, RequireChannel(schema, ChannelKind::kSuccess, obj));
    case ObjectiveKind::kForceLimit: {
      RequireChannel(schema, ChannelKind::kForce, obj);
      const auto fc = ChannelsOfKind(schema, ChannelKind::kForce);
      Value hinge;
      for (std::size_t ch : fc) {
        Value h = Mean(Square(Relu(AddScalar(Abs(SliceCols(points, ch, 1)), -obj.force_limit))));
        hinge = hinge.defined() ? Add(hinge, h) : h;
      }
      hinge = Scale(hinge, 1.0 / static_cast<double>(fc.size()));
      const auto sc = ChannelsOfKind(schema, ChannelKind::kSuccess);
      if (sc.empty()) return hinge;
      return Add(hinge, Scale(SuccessTerm(points, sc[0]), obj.success_coupling));
    }
    case ObjectiveKind::kTargetPose: {
      const auto pc = ChannelsOfKind(schema, ChannelKind::kPose);
      if (pc.size() < 2) RequireChannel({}, ChannelKind::kPose, obj);
      Value last = SliceRows(points, length - 1, 1);
      Value pose = ConcatCols({SliceCols(last, pc[0], 1), SliceCols(last, pc[1], 1)});
      Value target = Value::FromVector({1, 2}, obj.target, false, raw.dtype());
      return Sum(Square(Sub(pose, target)));
    }
  }
  throw std::invalid_argument("unknown objective kind");
}

SkillObjective::SkillObjective(const Checkpoint& ckpt, const EnvImage& image, SkillKind kind,
                               const Objective& obj, DType dtype)
    : model_(ckpt.config, ckpt.params.CastTo(dtype)),
      stats_(ckpt.stats),
      kind_(kind),
      obj_(obj),
      image_(image) {
  obj.Validate();
  if (ckpt.config.param_dim != ParamDim(kind)) {
    throw SchemaMismatchError("checkpoint expects " + std::to_string(ckpt.config.param_dim) +
                              " parameters, " + SkillKindName(kind) + " skill has " +
                              std::to_string(ParamDim(kind)));
  }
  model_.params().SetRequiresGrad(false);
  ValidateImage(image);
  const Matrix patches = Patchify(image);
  patches_ = Value::FromVector(
      {static_cast<std::size_t>(patches.rows()), kPatchWidth},
      std::span<const double>(patches.data(), static_cast<std::size_t>(patches.size())), false,
      dtype);
  grid_h_ = image.grid_h();
  grid_w_ = image.grid_w();
}

Value SkillObjective::Forward(const Value& p, std::size_t* length) const {
  const ModelConfig& cfg = model_.config();
  const std::size_t c = cfg.channels(), seg = cfg.segment_len;
  Value plan = PlanGraph(kind_, p, cfg.schema);
  std::vector<double> scale(c), shift(c);
  for (std::size_t j = 0; j < c; ++j) {
    scale[j] = 1.0 / stats_.std[j];
    shift[j] = -stats_.mean[j] / stats_.std[j];
  }
  plan = ColumnAffine(plan, scale, shift);
  const std::size_t t = plan.rows();
  const std::size_t s = NumSegments(t, seg);
  std::vector<double> flags(s * seg, 0.0);
  if (s * seg > t) {
    std::vector<std::size_t> rows(s * seg);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = std::min(i, t - 1);
    plan = GatherRows(plan, rows);
    std::fill(flags.begin() + static_cast<std::ptrdiff_t>(t), flags.end(), 1.0);
  }
  EncoderInput in;
  in.sim_segments = ConcatCols({Reshape(plan, {s, seg * c}),
                                Value::FromVector({s, seg}, flags, false, model_.dtype())});
  in.seg_mask.assign(s, 1);
  in.params = p;
  in.patches = patches_;
  in.batch = 1;
  in.segments = s;
  in.grid_h = grid_h_;
  in.grid_w = grid_w_;
  const Value raw = model_.DecodeFree(model_.Encode(in), s);
  if (*length == 0) *length = PredictedLength(raw, c, seg);
  return ObjectiveValue(obj_, raw, cfg.schema, stats_, seg, *length);
}

SkillObjective::Result SkillObjective::Evaluate(std::span<const double> params,
                                                std::size_t length) const {
  Value p = Value::FromVector({1, params.size()}, params, true, model_.dtype());
  Result r;
  r.length = length;
  Value f = Forward(p, &r.length);
  r.value = f.item();
  r.grad = Grad(f, {p}).at(0);
  return r;
}

double SkillObjective::ValueAt(std::span<const double> params, std::size_t length) const {
  NoGradGuard no_grad;
  Value p = Value::FromVector({1, params.size()}, params, false, model_.dtype());
  return Forward(p, &length).item();
}

Trajectory SkillObjective::Predict(std::span<const double> params) const {
  const SkillInstance skill = MakeSkill(kind_, std::vector<double>(params.begin(), params.end()));
  WorldOptions opts;
  opts.with_force = !ChannelsOfKind(model_.config().schema, ChannelKind::kForce).empty();
  return model_.Predict(Plan(skill, opts), params, image_, stats_);
}

OptimTrace Optimize(const Checkpoint& ckpt, const EnvImage& image, const SkillInstance& init,
                    const Objective& obj, const OptimOptions& options) {
  CheckInBounds(init);
  if (options.patience == 0) throw std::invalid_argument("patience must be positive");
  const SkillObjective f(ckpt, image, init.kind, obj, options.dtype);
  OptimTrace trace;
  std::vector<double> p = init.params;
  std::vector<double> velocity(p.size(), 0.0);
  for (std::size_t it = 0; it < options.max_iters; ++it) {
    const auto r = f.Evaluate(p);
    const double gn = Norm(r.grad);
    if (!std::isfinite(r.value) || !std::isfinite(gn)) {
      trace.aborted = true;
      trace.stop_reason = "non-finite objective or gradient at iteration " + std::to_string(it);
      break;
    }
    trace.steps.push_back({p, r.value, gn});
    const std::size_t n = trace.steps.size();
    if (n >= options.patience) {
      if (gn < options.grad_tol) {
        trace.converged = true;
        trace.stop_reason = "gradient norm below tolerance";
        break;
      }
      if (n > options.patience &&
          trace.steps[n - 1 - options.patience].objective - r.value < options.improve_tol) {
        trace.converged = true;
        trace.stop_reason = "no improvement over patience window";
        break;
      }
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      velocity[i] = options.momentum * velocity[i] - options.lr * r.grad[i];
      p[i] += velocity[i];
    }
    p = ClampToBounds(p, init.bounds);
  }
  if (trace.stop_reason.empty()) trace.stop_reason = "iteration limit";
  trace.final_params = p;
  return trace;
}

GradCheckResult GradCheck(const Checkpoint& ckpt, const EnvImage& image, SkillKind kind,
                          const Objective& obj, std::uint64_t seed, std::size_t n_points,
                          double step) {
  const SkillObjective f(ckpt, image, kind, obj, DType::kFloat64);
  const auto bounds = DefaultBounds(kind);
  Rng rng(seed);
  GradCheckResult out;
  for (std::size_t k = 0; k < n_points; ++k) {
    std::vector<double> x(bounds.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.Uniform(bounds[i].lo, bounds[i].hi);
    const auto r = f.Evaluate(x);
    std::vector<double> numeric(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      std::vector<double> hi = x, lo = x;
      hi[i] += step;
      lo[i] -= step;
      numeric[i] = (f.ValueAt(hi, r.length) - f.ValueAt(lo, r.length)) / (2.0 * step);
    }
    std::vector<double> diff(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) diff[i] = r.grad[i] - numeric[i];
    const double scale = std::max(Norm(r.grad), Norm(numeric));
    const double rel = scale > 0.0 ? Norm(diff) / scale : 0.0;
    out.max_rel_error = std::max(out.max_rel_error, rel);
    out.points.push_back(std::move(x));
    out.analytic.push_back(r.grad);
    out.numeric.push_back(std::move(numeric));
  }
  return out;
}

void WriteTraceCsv(std::ostream& os, const OptimTrace& trace) {
  const std::size_t p = trace.final_params.size();
  os << "iter,objective,grad_norm";
  for (std::size_t i = 0; i < p; ++i) os << ",p" << i;
  os << "\n";
  char buf[64];
  for (std::size_t it = 0; it < trace.steps.size(); ++it) {
    const OptimStep& s = trace.steps[it];
    os << it;
    std::snprintf(buf, sizeof(buf), ",%.10g,%.10g", s.objective, s.grad_norm);
    os << buf;
    for (double v : s.params) {
      std::snprintf(buf, sizeof(buf), ",%.10g", v);
      os << buf;
    }
    os << "\n";
  }
}

void WriteTraceJsonl(std::ostream& os, const OptimTrace& trace) {
  for (std::size_t it = 0; it < trace.steps.size(); ++it) {
    const OptimStep& s = trace.steps[it];
    nlohmann::json j = {{"iter", it},
                        {"objective", s.objective},
                        {"grad_norm", s.grad_norm},
                        {"params", s.params}};
    os << j.dump() << "\n";
  }
}

}  // namespace trajfuse
