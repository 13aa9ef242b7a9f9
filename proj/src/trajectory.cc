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

#include "trajfuse/trajectory.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace trajfuse {

const char* ChannelKindName(ChannelKind kind) {
  switch (kind) {
    case ChannelKind::kPose:
      return "pose";
    case ChannelKind::kForce:
      return "force";
    case ChannelKind::kSuccess:
      return "success";
    case ChannelKind::kReward:
      return "reward";
  }
  return "unknown";
}

std::optional<ChannelKind> ParseChannelKind(const std::string& name) {
  if (name == "pose") return ChannelKind::kPose;
  if (name == "force") return ChannelKind::kForce;
  if (name == "success") return ChannelKind::kSuccess;
  if (name == "reward") return ChannelKind::kReward;
  return std::nullopt;
}

std::string SchemaString(const ChannelSchema& schema) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (i) os << ", ";
    os << schema[i].name << ":" << ChannelKindName(schema[i].kind);
  }
  os << ")";
  return os.str();
}

std::vector<std::size_t> ChannelsOfKind(const ChannelSchema& schema, ChannelKind kind) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (schema[i].kind == kind) idx.push_back(i);
  }
  return idx;
}

bool IsNormalized(ChannelKind kind) {
  return kind == ChannelKind::kPose || kind == ChannelKind::kForce;
}

std::size_t Trajectory::real_length() const {
  std::size_t n = 0;
  while (n < pad_flags.size() && pad_flags[n] == 0) ++n;
  return n;
}

Trajectory MakeTrajectory(Matrix points, ChannelSchema schema, double dt) {
  Trajectory t;
  t.pad_flags.assign(static_cast<std::size_t>(points.rows()), 0);
  t.points = std::move(points);
  t.schema = std::move(schema);
  t.dt = dt;
  return t;
}

void ValidateTrajectory(const Trajectory& traj) {
  if (traj.length() < 1) throw std::invalid_argument("trajectory has no points");
  if (traj.pad_flags.size() != traj.length()) {
    throw std::invalid_argument("pad flag count does not match point count");
  }
  if (traj.schema.size() != traj.channels()) {
    throw std::invalid_argument("schema " + SchemaString(traj.schema) + " does not match " +
                                std::to_string(traj.channels()) + " channels");
  }
  if (!(traj.dt > 0.0)) throw std::invalid_argument("dt must be positive");
  const std::size_t real = traj.real_length();
  if (real == 0) throw std::invalid_argument("trajectory consists of padding only");
  for (std::size_t i = real; i < traj.length(); ++i) {
    if (traj.pad_flags[i] == 0) {
      throw std::invalid_argument("padding flags are not a contiguous suffix");
    }
    if (traj.points.row(static_cast<Eigen::Index>(i)) !=
        traj.points.row(static_cast<Eigen::Index>(real - 1))) {
      throw std::invalid_argument("padding point does not replicate the last real point");
    }
  }
}

NormStats NormStats::Identity(std::size_t channels) {
  return NormStats{std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
}

NormStats ComputeStats(std::span<const Trajectory> dataset) {
  if (dataset.empty()) throw std::invalid_argument("compute_stats: empty dataset");
  const ChannelSchema& schema = dataset.front().schema;
  const std::size_t c = schema.size();
  std::vector<double> sum(c, 0.0);
  double count = 0.0;
  for (const Trajectory& t : dataset) {
    if (t.schema != schema) {
      throw std::invalid_argument("compute_stats: inconsistent schemas " +
                                  SchemaString(schema) + " and " + SchemaString(t.schema));
    }
    const std::size_t n = t.real_length();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < c; ++j) sum[j] += t.points(i, j);
    }
    count += static_cast<double>(n);
  }
  if (count == 0.0) throw std::invalid_argument("compute_stats: no real points");
  NormStats stats;
  stats.mean.resize(c);
  for (std::size_t j = 0; j < c; ++j) stats.mean[j] = sum[j] / count;
  std::vector<double> sq(c, 0.0);
  for (const Trajectory& t : dataset) {
    const std::size_t n = t.real_length();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const double d = t.points(i, j) - stats.mean[j];
        sq[j] += d * d;
      }
    }
  }
  stats.std.resize(c);
  for (std::size_t j = 0; j < c; ++j) {
    stats.std[j] = std::max(std::sqrt(sq[j] / count), kMinStd);
    if (!IsNormalized(schema[j].kind)) {
      stats.mean[j] = 0.0;
      stats.std[j] = 1.0;
    }
  }
  return stats;
}

namespace {

void CheckStats(const Trajectory& traj, const NormStats& stats) {
  if (stats.mean.size() != traj.channels() || stats.std.size() != traj.channels()) {
    throw std::invalid_argument("normalization stats cover " +
                                std::to_string(stats.mean.size()) + " channels, trajectory has " +
                                std::to_string(traj.channels()));
  }
}

}  // namespace

Trajectory Normalize(const Trajectory& traj, const NormStats& stats) {
  CheckStats(traj, stats);
  Trajectory out = traj;
  for (std::size_t j = 0; j < traj.channels(); ++j) {
    if (!IsNormalized(traj.schema[j].kind)) continue;
    out.points.col(j) = (traj.points.col(j).array() - stats.mean[j]) / stats.std[j];
  }
  return out;
}

Trajectory Denormalize(const Trajectory& traj, const NormStats& stats) {
  CheckStats(traj, stats);
  Trajectory out = traj;
  for (std::size_t j = 0; j < traj.channels(); ++j) {
    if (!IsNormalized(traj.schema[j].kind)) continue;
    out.points.col(j) = traj.points.col(j).array() * stats.std[j] + stats.mean[j];
  }
  return out;
}

Trajectory PadTo(const Trajectory& traj, std::size_t length) {
  if (length < traj.length()) {
    throw std::invalid_argument("pad: target length " + std::to_string(length) +
                                " shorter than trajectory " + std::to_string(traj.length()));
  }
  const std::size_t real = traj.real_length();
  if (real == 0) throw std::invalid_argument("pad: trajectory has no real point");
  Trajectory out = traj;
  const auto old_len = static_cast<Eigen::Index>(traj.length());
  out.points.conservativeResize(static_cast<Eigen::Index>(length), Eigen::NoChange);
  for (auto i = old_len; i < static_cast<Eigen::Index>(length); ++i) {
    out.points.row(i) = traj.points.row(static_cast<Eigen::Index>(real - 1));
  }
  out.pad_flags.resize(length, 1);
  return out;
}

std::size_t NumSegments(std::size_t length, std::size_t segment_len) {
  return (length + segment_len - 1) / segment_len;
}

std::vector<Trajectory> PadBatch(std::span<const Trajectory> trajs, std::size_t segment_len) {
  if (trajs.empty()) throw std::invalid_argument("pad_batch: empty batch");
  std::size_t max_len = 0;
  for (const Trajectory& t : trajs) max_len = std::max(max_len, t.length());
  const std::size_t target = NumSegments(max_len, segment_len) * segment_len;
  std::vector<Trajectory> out;
  out.reserve(trajs.size());
  for (const Trajectory& t : trajs) out.push_back(PadTo(t, target));
  return out;
}

std::size_t SegmentWidth(std::size_t channels, std::size_t segment_len) {
  return segment_len * (channels + 1);
}

std::vector<std::uint8_t> SegmentMask(const Matrix& segments, std::size_t channels,
                                      std::size_t segment_len) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(segments.rows()), 0);
  const std::size_t flag0 = segment_len * channels;
  for (Eigen::Index s = 0; s < segments.rows(); ++s) {
    for (std::size_t j = 0; j < segment_len; ++j) {
      if (!(segments(s, static_cast<Eigen::Index>(flag0 + j)) > 0.5)) {
        mask[static_cast<std::size_t>(s)] = 1;
        break;
      }
    }
  }
  return mask;
}

SegmentBatch Segment(std::span<const Trajectory> padded, std::size_t segment_len) {
  SegmentBatch batch;
  batch.segment_len = segment_len;
  if (padded.empty()) return batch;
  batch.channels = padded.front().channels();
  const std::size_t c = batch.channels;
  const std::size_t width = batch.width();
  for (const Trajectory& t : padded) {
    ValidateTrajectory(t);
    if (t.channels() != c) throw std::invalid_argument("segment: inconsistent channel counts");
    if (t.length() % segment_len != 0) {
      throw std::invalid_argument("segment: length " + std::to_string(t.length()) +
                                  " is not a multiple of " + std::to_string(segment_len));
    }
    const std::size_t s_count = t.length() / segment_len;
    Matrix seg(static_cast<Eigen::Index>(s_count), static_cast<Eigen::Index>(width));
    for (std::size_t s = 0; s < s_count; ++s) {
      for (std::size_t j = 0; j < segment_len; ++j) {
        const std::size_t p = s * segment_len + j;
        for (std::size_t ch = 0; ch < c; ++ch) seg(s, j * c + ch) = t.points(p, ch);
        seg(s, segment_len * c + j) = t.pad_flags[p] ? 1.0 : 0.0;
      }
    }
    batch.seg_mask.push_back(SegmentMask(seg, c, segment_len));
    batch.segments.push_back(std::move(seg));
    batch.lengths.push_back(t.real_length());
  }
  return batch;
}

Trajectory UnsegmentOne(const Matrix& segments, const ChannelSchema& schema, double dt,
                        const NormStats* stats, std::size_t segment_len) {
  const std::size_t c = schema.size();
  if (static_cast<std::size_t>(segments.cols()) != SegmentWidth(c, segment_len)) {
    throw std::invalid_argument("unsegment: width " + std::to_string(segments.cols()) +
                                " does not match schema " + SchemaString(schema));
  }
  const std::size_t total = static_cast<std::size_t>(segments.rows()) * segment_len;
  std::size_t real = total;
  for (std::size_t p = 0; p < total; ++p) {
    const std::size_t s = p / segment_len, j = p % segment_len;
    if (segments(s, segment_len * c + j) > 0.5) {
      real = p;
      break;
    }
  }
  const bool valid = real > 0;
  const std::size_t keep = valid ? real : 1;
  Matrix pts(static_cast<Eigen::Index>(keep), static_cast<Eigen::Index>(c));
  for (std::size_t p = 0; p < keep; ++p) {
    const std::size_t s = p / segment_len, j = p % segment_len;
    for (std::size_t ch = 0; ch < c; ++ch) pts(p, ch) = segments(s, j * c + ch);
  }
  Trajectory t = MakeTrajectory(std::move(pts), schema, dt);
  t.valid = valid;
  if (stats) t = Denormalize(t, *stats);
  return t;
}

std::vector<Trajectory> Unsegment(const SegmentBatch& batch, const ChannelSchema& schema,
                                  double dt, const NormStats* stats) {
  std::vector<Trajectory> out;
  out.reserve(batch.batch());
  for (const Matrix& seg : batch.segments) {
    out.push_back(UnsegmentOne(seg, schema, dt, stats, batch.segment_len));
  }
  return out;
}

Value SegmentsToValue(const SegmentBatch& batch) {
  std::size_t rows = 0;
  for (const Matrix& m : batch.segments) rows += static_cast<std::size_t>(m.rows());
  std::vector<double> data;
  data.reserve(rows * batch.width());
  for (const Matrix& m : batch.segments) data.insert(data.end(), m.data(), m.data() + m.size());
  return Value::FromVector({rows, batch.width()}, data);
}

Value EmbedSegments(const Value& segments, const Value& weight, const Value& bias) {
  if (segments.rank() != 2 || weight.rank() != 2 || segments.cols() != weight.rows()) {
    throw DimensionError("embed_segments: segment width " + ShapeString(segments.shape()) +
                         " does not match projection " + ShapeString(weight.shape()));
  }
  return Linear(segments, weight, bias);
}

void WriteTrajectoryCsv(std::ostream& os, const Trajectory& traj) {
  for (const Channel& c : traj.schema) os << c.name << ",";
  os << "pad\n";
  char buf[32];
  for (std::size_t i = 0; i < traj.length(); ++i) {
    for (std::size_t j = 0; j < traj.channels(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.10g,",
                    traj.points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      os << buf;
    }
    os << static_cast<int>(traj.pad_flags[i]) << "\n";
  }
}

}  // namespace trajfuse
