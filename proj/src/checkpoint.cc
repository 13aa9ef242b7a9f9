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

#include "trajfuse/checkpoint.h"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "trajfuse/binary_io.h"

namespace trajfuse {
namespace {
constexpr char kMagic[4] = {'T', 'F', 'C', 'K'};
}  // namespace

nlohmann::json SchemaToJson(const ChannelSchema& schema) {
  nlohmann::json j = nlohmann::json::array();
  for (const Channel& c : schema) {
    j.push_back({{"name", c.name}, {"kind", ChannelKindName(c.kind)}});
  }
  return j;
}

ChannelSchema SchemaFromJson(const nlohmann::json& j) {
  ChannelSchema schema;
  for (const auto& item : j) {
    auto kind = ParseChannelKind(item.at("kind").get<std::string>());
    if (!kind) throw io::FormatError("unknown channel kind in manifest");
    schema.push_back({item.at("name").get<std::string>(), *kind});
  }
  return schema;
}

nlohmann::json ConfigToJson(const ModelConfig& c) {
  return {{"d_model", c.d_model},         {"n_enc_layers", c.n_enc_layers},
          {"n_dec_layers", c.n_dec_layers}, {"n_heads", c.n_heads},
          {"segment_len", c.segment_len}, {"param_dim", c.param_dim},
          {"schema", SchemaToJson(c.schema)}, {"max_segments", c.max_segments},
          {"pos_grid", c.pos_grid},       {"ffn_mult", c.ffn_mult}};
}

ModelConfig ConfigFromJson(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_enc_layers = j.at("n_enc_layers").get<std::size_t>();
  c.n_dec_layers = j.at("n_dec_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.segment_len = j.at("segment_len").get<std::size_t>();
  c.param_dim = j.at("param_dim").get<std::size_t>();
  c.schema = SchemaFromJson(j.at("schema"));
  c.max_segments = j.at("max_segments").get<std::size_t>();
  c.pos_grid = j.at("pos_grid").get<std::size_t>();
  c.ffn_mult = j.at("ffn_mult").get<std::size_t>();
  c.Validate();
  return c;
}

void Checkpoint::Write(std::ostream& os) const {
  nlohmann::json manifest = {{"config", ConfigToJson(config)},
                             {"stats", {{"mean", stats.mean}, {"std", stats.std}}},
                             {"task", task}};
  os.write(kMagic, 4);
  io::WritePod<std::uint32_t>(os, kFormatVersion);
  io::WriteString(os, manifest.dump());
  params.Write(os);
  if (!os) throw io::IoError("failed writing checkpoint");
}

Checkpoint Checkpoint::Read(std::istream& is) {
  char magic[4];
  io::ReadBytes(is, magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw io::FormatError("not a checkpoint file");
  const auto version = io::ReadPod<std::uint32_t>(is);
  if (version != kFormatVersion) {
    throw io::FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  try {
    const auto manifest = nlohmann::json::parse(io::ReadString(is));
    ck.config = ConfigFromJson(manifest.at("config"));
    ck.stats.mean = manifest.at("stats").at("mean").get<std::vector<double>>();
    ck.stats.std = manifest.at("stats").at("std").get<std::vector<double>>();
    ck.task = manifest.at("task").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw io::FormatError(std::string("bad checkpoint manifest: ") + e.what());
  }
  if (ck.stats.mean.size() != ck.config.channels() ||
      ck.stats.std.size() != ck.config.channels()) {
    throw io::FormatError("checkpoint stats do not match the channel schema");
  }
  ck.params = ParamStore::Read(is);
  return ck;
}

void Checkpoint::Save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io::IoError("cannot open " + path.string() + " for writing");
  Write(os);
  os.flush();
  if (!os) throw io::IoError("failed writing " + path.string());
}

Checkpoint Checkpoint::Load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io::IoError("cannot open " + path.string());
  return Read(is);
}

std::uint64_t Checkpoint::Hash() const {
  std::ostringstream os;
  Write(os);
  return io::Fnv1a(os.str());
}

std::string HexDigest(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace trajfuse
