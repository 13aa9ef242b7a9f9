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


#ifndef TRAJFUSE_DATASET_H_
#define TRAJFUSE_DATASET_H_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "trajfuse/skill_world.h"
#include "trajfuse/trajectory.h"
#include "trajfuse/vision.h"

namespace trajfuse {

struct Record {
  std::uint64_t env_seed = 0;
  EnvImage image;
  std::vector<double> params;
  Trajectory plan;
  Trajectory exec;
};

struct Dataset {
  SkillKind kind = SkillKind::kPlanarGrasp;
  ChannelSchema schema;
  std::size_t param_dim = 0;
  std::size_t image_height = 0;
  std::size_t image_width = 0;
  double dt = kPlanDt;
  std::vector<Record> records;

  std::size_t size() const { return records.size(); }
  // fraction of records whose executed success channel ends at 1 (0 when the
  // schema has no success channel)
  double SuccessFraction() const;
  std::vector<Trajectory> Executions() const;
  // a dataset sharing this header with a subset of records
  Dataset Subset(std::size_t begin, std::size_t count) const;
};

// Record i uses environment seed HashCombine(seed, i) and parameters drawn
// uniformly within the skill bounds from an independent stream.
Dataset GenerateDataset(SkillKind kind, std::size_t n, std::uint64_t seed,
                        const WorldOptions& opts = {});

// Container layout (little-endian):
//   magic "TFDS" | u32 version | u64 record count | u8 skill kind |
//   u32 param_dim | u32 channel count | per channel: string name, u8 kind |
//   u32 height | u32 width | f64 dt |
//   per record: u64 env seed | u8 pixels[h*w*3] | f64 params[param_dim] |
//               u32 plan length | f64 plan points | u32 exec length |
//               f64 exec points
// Images are stored at 8 bits; RenderEnv output round-trips exactly.
class DatasetFormat {
 public:
  static constexpr std::uint32_t kVersion = 1;
};

void WriteDataset(std::ostream& os, const Dataset& ds);
Dataset ReadDataset(std::istream& is);
// io::IoError / io::FormatError messages carry the path
void SaveDataset(const Dataset& ds, const std::filesystem::path& path);
Dataset LoadDataset(const std::filesystem::path& path);

}  // namespace trajfuse

#endif  // TRAJFUSE_DATASET_H_
