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

#ifndef TRAJFUSE_CHECKPOINT_H_
#define TRAJFUSE_CHECKPOINT_H_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include <json.hpp>

#include "trajfuse/model.h"
#include "trajfuse/trajectory.h"

namespace trajfuse {

nlohmann::json SchemaToJson(const ChannelSchema& schema);
ChannelSchema SchemaFromJson(const nlohmann::json& j);
nlohmann::json ConfigToJson(const ModelConfig& config);
ModelConfig ConfigFromJson(const nlohmann::json& j);

// Trained model bundle.
//
// File layout: magic "TFCK" | u32 version | u32 manifest length |
// manifest (JSON: model config, channel schema, norm stats, task) |
// parameter store (see ParamStore).
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  ModelConfig config;
  NormStats stats;
  // skill kind the model was trained for ("grasp", "reach")
  std::string task;
  ParamStore params;

  FusionModel Model() const { return FusionModel(config, params.Clone()); }

  void Write(std::ostream& os) const;
  static Checkpoint Read(std::istream& is);
  void Save(const std::filesystem::path& path) const;
  static Checkpoint Load(const std::filesystem::path& path);

  // FNV-1a over the serialized checkpoint
  std::uint64_t Hash() const;
};

std::string HexDigest(std::uint64_t h);

}  // namespace trajfuse

#endif  // TRAJFUSE_CHECKPOINT_H_
