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

#ifndef TRAJFUSE_TRAJECTORY_H_
#define TRAJFUSE_TRAJECTORY_H_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "trajfuse/tensor.h"

namespace trajfuse {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::size_t kSegmentLength = 20;

enum class ChannelKind : std::uint8_t { kPose = 0, kForce = 1, kSuccess = 2, kReward = 3 };

const char* ChannelKindName(ChannelKind kind);
std::optional<ChannelKind> ParseChannelKind(const std::string& name);

struct Channel {
  std::string name;
  ChannelKind kind = ChannelKind::kPose;
  bool operator==(const Channel&) const = default;
};

using ChannelSchema = std::vector<Channel>;

std::string SchemaString(const ChannelSchema& schema);
// indices of all channels of a kind, in schema order
std::vector<std::size_t> ChannelsOfKind(const ChannelSchema& schema, ChannelKind kind);
// success/reward channels are bounded quantities and skip normalization
bool IsNormalized(ChannelKind kind);

// Fixed-interval time series. Rows are points, columns follow the schema.
// Padding points form a suffix and replicate the last real point.
struct Trajectory {
  Matrix points;
  double dt = 0.05;
  std::vector<std::uint8_t> pad_flags;
  ChannelSchema schema;
  // false for degenerate decodes (no real point)
  bool valid = true;
  // decoding hit the segment limit before a terminating segment
  bool truncated = false;

  std::size_t length() const { return static_cast<std::size_t>(points.rows()); }
  std::size_t channels() const { return static_cast<std::size_t>(points.cols()); }
  // number of non-padding points
  std::size_t real_length() const;
};

// fresh trajectory without padding
Trajectory MakeTrajectory(Matrix points, ChannelSchema schema, double dt = 0.05);

// Throws std::invalid_argument when an invariant is broken.
void ValidateTrajectory(const Trajectory& traj);

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;

  static NormStats Identity(std::size_t channels);
};

inline constexpr double kMinStd = 1e-6;

// Per-channel statistics over non-padding points of all trajectories.
NormStats ComputeStats(std::span<const Trajectory> dataset);

Trajectory Normalize(const Trajectory& traj, const NormStats& stats);
Trajectory Denormalize(const Trajectory& traj, const NormStats& stats);

// Extends a trajectory to `length` points by replicating its last real point.
Trajectory PadTo(const Trajectory& traj, std::size_t length);

// Pads every trajectory to the batch maximum rounded up to a multiple of
// segment_len.
std::vector<Trajectory> PadBatch(std::span<const Trajectory> trajs,
                                 std::size_t segment_len = kSegmentLength);

std::size_t NumSegments(std::size_t length, std::size_t segment_len = kSegmentLength);

// Segment vectors are [p0 channels, ..., p(L-1) channels, flag0, ..., flag(L-1)].
struct SegmentBatch {
  std::size_t segment_len = kSegmentLength;
  std::size_t channels = 0;
  // one (S x L*(C+1)) matrix per item
  std::vector<Matrix> segments;
  // one S-vector per item; 0 marks all-padding segments
  std::vector<std::vector<std::uint8_t>> seg_mask;
  std::vector<std::size_t> lengths;

  std::size_t batch() const { return segments.size(); }
  std::size_t width() const { return segment_len * (channels + 1); }
};

std::size_t SegmentWidth(std::size_t channels, std::size_t segment_len = kSegmentLength);

SegmentBatch Segment(std::span<const Trajectory> padded,
                     std::size_t segment_len = kSegmentLength);

// Seg-mask of a single segment matrix (S x width), from its flag entries.
std::vector<std::uint8_t> SegmentMask(const Matrix& segments, std::size_t channels,
                                      std::size_t segment_len = kSegmentLength);

// Inverse of Segment. A decoded point is padding iff its flag value > 0.5;
// each trajectory is cut at its first padding point. When `stats` is given
// the result is denormalized.
std::vector<Trajectory> Unsegment(const SegmentBatch& batch, const ChannelSchema& schema,
                                  double dt, const NormStats* stats = nullptr);
Trajectory UnsegmentOne(const Matrix& segments, const ChannelSchema& schema, double dt,
                        const NormStats* stats = nullptr,
                        std::size_t segment_len = kSegmentLength);

// Stacks the items' segments into a [B*S x width] constant value.
Value SegmentsToValue(const SegmentBatch& batch);

// Single affine projection of stacked segment rows into tokens.
Value EmbedSegments(const Value& segments, const Value& weight, const Value& bias);

// One row per point; header is the channel names followed by "pad".
void WriteTrajectoryCsv(std::ostream& os, const Trajectory& traj);

}  // namespace trajfuse

#endif  // TRAJFUSE_TRAJECTORY_H_
