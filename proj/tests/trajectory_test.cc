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


#include <gtest/gtest.h>

#include <sstream>

#include "trajfuse/random.h"
#include "trajfuse/trajectory.h"

namespace trajfuse {
namespace {

ChannelSchema Schema(std::size_t c) {
  ChannelSchema s;
  for (std::size_t i = 0; i < c; ++i) s.push_back({"c" + std::to_string(i), ChannelKind::kPose});
  return s;
}

Trajectory RandomTraj(std::size_t len, std::size_t c, Rng& rng, double scale = 1.0) {
  Matrix m(static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(c));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.Uniform(-scale, scale);
  return MakeTrajectory(std::move(m), Schema(c));
}

Trajectory Constant(std::size_t len, double v) {
  return MakeTrajectory(Matrix::Constant(static_cast<Eigen::Index>(len), 1, v), Schema(1));
}

TEST(StatsTest, ConstantChannelClampsStd) {
  std::vector<Trajectory> ds = {Constant(10, 5.0)};
  const NormStats s = ComputeStats(ds);
  EXPECT_DOUBLE_EQ(s.mean[0], 5.0);
  EXPECT_DOUBLE_EQ(s.std[0], kMinStd);
}

TEST(StatsTest, EqualWeightedMean) {
  std::vector<Trajectory> ds = {Constant(10, 0.0), Constant(10, 2.0)};
  EXPECT_DOUBLE_EQ(ComputeStats(ds).mean[0], 1.0);
}

TEST(StatsTest, EmptyDatasetThrows) {
  std::vector<Trajectory> ds;
  EXPECT_THROW(ComputeStats(ds), std::invalid_argument);
}

TEST(StatsTest, PaddingPointsAreIgnored) {
  std::vector<Trajectory> ds = {PadTo(Constant(3, 1.0), 100), Constant(3, 3.0)};
  EXPECT_DOUBLE_EQ(ComputeStats(ds).mean[0], 2.0);
}

TEST(StatsTest, SuccessAndRewardChannelsStayUnnormalized) {
  Matrix m(2, 3);
  m << 1, 0.2, 0.0, 5, 0.9, 1.0;
  std::vector<Trajectory> ds = {MakeTrajectory(
      m, {{"x", ChannelKind::kPose}, {"r", ChannelKind::kReward}, {"s", ChannelKind::kSuccess}})};
  const NormStats s = ComputeStats(ds);
  EXPECT_EQ(s.mean[1], 0.0);
  EXPECT_EQ(s.std[1], 1.0);
  EXPECT_EQ(s.mean[2], 0.0);
  EXPECT_EQ(s.std[2], 1.0);
  const Trajectory n = Normalize(ds[0], s);
  EXPECT_EQ(n.points(1, 1), 0.9);
}

TEST(StatsTest, NormalizedDatasetHasUnitStats) {
  Rng rng(1);
  std::vector<Trajectory> ds;
  for (int i = 0; i < 100; ++i) ds.push_back(RandomTraj(1 + rng.Index(50), 2, rng, 3.0));
  const NormStats s = ComputeStats(ds);
  std::vector<Trajectory> normed;
  for (const auto& t : ds) normed.push_back(Normalize(t, s));
  const NormStats s2 = ComputeStats(normed);
  for (int j = 0; j < 2; ++j) {
    EXPECT_NEAR(s2.mean[j], 0.0, 1e-9);
    EXPECT_NEAR(s2.std[j], 1.0, 1e-9);
  }
}

TEST(NormalizeTest, Arithmetic) {
  NormStats s{{1.0}, {2.0}};
  EXPECT_DOUBLE_EQ(Normalize(Constant(1, 3.0), s).points(0, 0), 1.0);
  const Trajectory t = Constant(4, 7.0);
  EXPECT_EQ(Normalize(t, NormStats::Identity(1)).points, t.points);
}

TEST(NormalizeTest, ChannelMismatchThrows) {
  EXPECT_THROW(Normalize(Constant(2, 1.0), NormStats::Identity(2)), std::invalid_argument);
}

TEST(NormalizeTest, RoundTripWithin1e6) {
  Rng rng(2);
  const Trajectory t = RandomTraj(30, 3, rng, 10.0);
  NormStats s{{0.3, -2.0, 5.0}, {0.01, 3.0, 70.0}};
  const Trajectory back = Denormalize(Normalize(t, s), s);
  EXPECT_LT((back.points - t.points).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(PadTest, BatchExample) {
  Rng rng(3);
  std::vector<Trajectory> b = {RandomTraj(15, 2, rng), RandomTraj(32, 2, rng)};
  const auto padded = PadBatch(b);
  ASSERT_EQ(padded[0].length(), 40u);
  ASSERT_EQ(padded[1].length(), 40u);
  EXPECT_EQ(padded[0].length() - padded[0].real_length(), 25u);
  EXPECT_EQ(padded[1].length() - padded[1].real_length(), 8u);
  for (const auto& t : padded) ValidateTrajectory(t);
  EXPECT_EQ(padded[1].points.topRows(32), b[1].points);
}

TEST(PadTest, MultipleUnchanged) {
  Rng rng(4);
  std::vector<Trajectory> b = {RandomTraj(40, 2, rng)};
  const auto padded = PadBatch(b);
  EXPECT_EQ(padded[0].length(), 40u);
  EXPECT_EQ(padded[0].real_length(), 40u);
}

TEST(PadTest, Length47FlagsLayout) {
  Rng rng(5);
  std::vector<Trajectory> b = {RandomTraj(47, 1, rng)};
  const auto padded = PadBatch(b);
  ASSERT_EQ(padded[0].length(), 60u);
  for (std::size_t i = 0; i < 60; ++i) EXPECT_EQ(padded[0].pad_flags[i], i >= 47 ? 1 : 0);
}

TEST(SegmentTest, ShapeAndMasks) {
  Rng rng(6);
  std::vector<Trajectory> b = {PadTo(RandomTraj(47, 2, rng), 60), PadTo(RandomTraj(20, 2, rng), 60)};
  const SegmentBatch sb = Segment(b);
  ASSERT_EQ(sb.segments[0].rows(), 3);
  EXPECT_EQ(sb.segments[0].cols(), 20 * 3);
  EXPECT_EQ(sb.seg_mask[0], (std::vector<std::uint8_t>{1, 1, 1}));
  EXPECT_EQ(sb.seg_mask[1], (std::vector<std::uint8_t>{1, 0, 0}));
  EXPECT_EQ(sb.lengths, (std::vector<std::size_t>{47, 20}));
}

TEST(SegmentTest, LayoutIsPointsThenFlags) {
  Matrix m(20, 2);
  for (int i = 0; i < 20; ++i) m.row(i) << i, 100 + i;
  Trajectory t = PadTo(MakeTrajectory(m.topRows(18), Schema(2)), 20);
  const SegmentBatch sb = Segment(std::span<const Trajectory>(&t, 1));
  const Matrix& s = sb.segments[0];
  EXPECT_EQ(s(0, 0), 0.0);
  EXPECT_EQ(s(0, 1), 100.0);
  EXPECT_EQ(s(0, 2), 1.0);
  EXPECT_EQ(s(0, 3), 101.0);
  EXPECT_EQ(s(0, 40 + 17), 0.0);
  EXPECT_EQ(s(0, 40 + 18), 1.0);
}

TEST(SegmentTest, IndivisibleLengthThrows) {
  Rng rng(7);
  std::vector<Trajectory> b = {RandomTraj(21, 2, rng)};
  EXPECT_THROW(Segment(b), std::invalid_argument);
}

TEST(UnsegmentTest, RoundTripExact) {
  Rng rng(8);
  std::vector<Trajectory> b;
  for (std::size_t len : {1, 19, 20, 21, 57}) b.push_back(RandomTraj(len, 3, rng));
  const auto padded = PadBatch(b);
  const auto back = Unsegment(Segment(padded), Schema(3), 0.05);
  for (std::size_t i = 0; i < b.size(); ++i) {
    EXPECT_EQ(back[i].points, b[i].points);
    EXPECT_EQ(back[i].pad_flags, b[i].pad_flags);
    EXPECT_TRUE(back[i].valid);
  }
}

TEST(UnsegmentTest, AllPaddingGivesInvalidLengthOne) {
  Matrix seg = Matrix::Zero(2, 40);
  seg.rightCols(20).setOnes();
  seg.block(0, 20, 2, 20).setConstant(0.9);
  const Trajectory t = UnsegmentOne(seg, Schema(1), 0.05);
  EXPECT_EQ(t.length(), 1u);
  EXPECT_FALSE(t.valid);
}

TEST(UnsegmentTest, FirstFlagWins) {
  Matrix seg = Matrix::Zero(1, 40);
  seg(0, 22) = 1.0;  // flag of point 2
  seg(0, 25) = 0.2;
  EXPECT_EQ(UnsegmentOne(seg, Schema(1), 0.05).length(), 2u);
}

TEST(UnsegmentTest, FlagsAreThresholdedNotRejected) {
  Matrix seg = Matrix::Zero(1, 40);
  seg.block(0, 20, 1, 20).setConstant(-3.0);
  seg(0, 30) = 7.5;
  EXPECT_EQ(UnsegmentOne(seg, Schema(1), 0.05).length(), 10u);
}

TEST(EmbedSegmentsTest, ZeroAndIdentityProjections) {
  Rng rng(9);
  std::vector<double> seg(40);
  for (double& v : seg) v = rng.Uniform(-1, 1);
  Value s = Value::FromVector({1, 40}, seg);
  EXPECT_EQ(EmbedSegments(s, Value::Zeros({40, 8}), Value::Zeros({8})).ToVector(),
            std::vector<double>(8, 0.0));
  std::vector<double> eye(40 * 40, 0.0);
  for (int i = 0; i < 40; ++i) eye[i * 40 + i] = 1.0;
  const auto out =
      EmbedSegments(s, Value::FromVector({40, 40}, eye), Value::Zeros({40})).ToVector();
  for (int i = 0; i < 40; ++i) EXPECT_FLOAT_EQ(out[i], seg[i]);
  EXPECT_THROW(EmbedSegments(s, Value::Zeros({39, 8}), Value::Zeros({8})), DimensionError);
}

TEST(EmbedSegmentsTest, Linearity) {
  Rng rng(10);
  auto rv = [&](std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.Uniform(-1, 1);
    return v;
  };
  Value w = Value::FromVector({40, 8}, rv(320));
  Value b = Value::FromVector({8}, rv(8));
  Value x = Value::FromVector({1, 40}, rv(40));
  Value y = Value::FromVector({1, 40}, rv(40));
  const auto lhs = EmbedSegments(Add(x, y), w, b).ToVector();
  const auto ex = EmbedSegments(x, w, b).ToVector();
  const auto ey = EmbedSegments(y, w, b).ToVector();
  const auto bb = b.ToVector();
  for (int i = 0; i < 8; ++i) EXPECT_NEAR(lhs[i], ex[i] + ey[i] - bb[i], 1e-5);
}

// property sweep over lengths 1..200 and channel counts
TEST(CodecPropertyTest, RandomLengthsRoundTripAndMasks) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t c = std::vector<std::size_t>{2, 3, 5}[rng.Index(3)];
    const std::size_t len = 1 + rng.Index(200);
    std::vector<Trajectory> b = {RandomTraj(len, c, rng, 5.0)};
    const auto padded = PadBatch(b);
    ASSERT_EQ(padded[0].length(), NumSegments(len) * kSegmentLength);
    const SegmentBatch sb = Segment(padded);
    ASSERT_EQ(static_cast<std::size_t>(sb.segments[0].rows()), NumSegments(len));
    for (std::size_t s = 0; s < sb.seg_mask[0].size(); ++s) {
      EXPECT_EQ(sb.seg_mask[0][s], s * kSegmentLength < len ? 1 : 0);
    }
    const auto back = Unsegment(sb, b[0].schema, 0.05);
    ASSERT_EQ(back[0].points, b[0].points);
  }
}

TEST(CsvTest, HeaderAndRows) {
  Matrix m(2, 2);
  m << 1, 2, 3, 4;
  Trajectory t = PadTo(MakeTrajectory(m, Schema(2)), 3);
  std::ostringstream os;
  WriteTrajectoryCsv(os, t);
  EXPECT_EQ(os.str(), "c0,c1,pad\n1,2,0\n3,4,0\n3,4,1\n");
}

TEST(ValidateTest, RejectsBrokenPadding) {
  Trajectory t = Constant(3, 1.0);
  t.pad_flags = {0, 1, 0};
  EXPECT_THROW(ValidateTrajectory(t), std::invalid_argument);
  t.pad_flags = {1, 1, 1};
  EXPECT_THROW(ValidateTrajectory(t), std::invalid_argument);
}

}  // namespace
}  // namespace trajfuse
