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


#include "trajfuse/dataset.h"

#include <cmath>
#include <cstring>
#include <fstream>

#include "trajfuse/binary_io.h"
#include "trajfuse/random.h"

namespace trajfuse {
namespace {

constexpr char kMagic[4] = {'T', 'F', 'D', 'S'};
constexpr std::uint32_t kMaxDim = 1u << 16;

void WritePoints(std::ostream& os, const Trajectory& t) {
  io::WritePod<std::uint32_t>(os, static_cast<std::uint32_t>(t.length()));
  os.write(reinterpret_cast<const char*>(t.points.data()),
           static_cast<std::streamsize>(t.points.size() * sizeof(double)));
}

Trajectory ReadPoints(std::istream& is, const ChannelSchema& schema, double dt) {
  const auto len = io::ReadPod<std::uint32_t>(is);
  if (len == 0 || len > kMaxDim) {
    throw io::FormatError("trajectory length " + std::to_string(len) + " out of range");
  }
  Matrix pts(len, static_cast<Eigen::Index>(schema.size()));
  io::ReadBytes(is, reinterpret_cast<char*>(pts.data()),
                static_cast<std::size_t>(pts.size()) * sizeof(double));
  return MakeTrajectory(std::move(pts), schema, dt);
}

bool RecordSucceeded(const Trajectory& exec) {
  const auto sc = ChannelsOfKind(exec.schema, ChannelKind::kSuccess);
  if (sc.empty()) return false;
  return exec.points(static_cast<Eigen::Index>(exec.real_length() - 1), sc[0]) > 0.5;
}

}  // namespace

double Dataset::SuccessFraction() const {
  if (records.empty()) return 0.0;
  std::size_t n = 0;
  for (const Record& r : records) n += RecordSucceeded(r.exec) ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(records.size());
}

std::vector<Trajectory> Dataset::Executions() const {
  std::vector<Trajectory> out;
  out.reserve(records.size());
  for (const Record& r : records) out.push_back(r.exec);
  return out;
}

Dataset Dataset::Subset(std::size_t begin, std::size_t count) const {
  if (begin + count > records.size()) throw std::out_of_range("subset beyond dataset end");
  Dataset out = *this;
  out.records.assign(records.begin() + static_cast<std::ptrdiff_t>(begin),
                     records.begin() + static_cast<std::ptrdiff_t>(begin + count));
  return out;
}

Dataset GenerateDataset(SkillKind kind, std::size_t n, std::uint64_t seed,
                        const WorldOptions& opts) {
  if (n == 0) throw std::invalid_argument("dataset size must be at least 1");
  Dataset ds;
  ds.kind = kind;
  ds.schema = SkillSchema(kind, opts);
  ds.param_dim = ParamDim(kind);
  ds.image_height = ds.image_width = opts.image_size;
  ds.dt = kPlanDt;
  ds.records.resize(n);
  const auto bounds = DefaultBounds(kind);
  for (std::size_t i = 0; i < n; ++i) {
    Record& r = ds.records[i];
    r.env_seed = HashCombine(seed, i);
    Rng rng(HashCombine(r.env_seed, 0x70617261ull));
    r.params.resize(bounds.size());
    for (std::size_t k = 0; k < bounds.size(); ++k) {
      r.params[k] = rng.Uniform(bounds[k].lo, bounds[k].hi);
    }
    const EnvSpec env = MakeEnv(r.env_seed);
    const SkillInstance skill = MakeSkill(kind, r.params);
    r.image = RenderEnv(env, opts.image_size);
    r.plan = Plan(skill, opts);
    r.exec = Execute(skill, env, opts);
  }
  return ds;
}

void WriteDataset(std::ostream& os, const Dataset& ds) {
  os.write(kMagic, 4);
  io::WritePod<std::uint32_t>(os, DatasetFormat::kVersion);
  io::WritePod<std::uint64_t>(os, ds.records.size());
  io::WritePod<std::uint8_t>(os, static_cast<std::uint8_t>(ds.kind));
  io::WritePod<std::uint32_t>(os, static_cast<std::uint32_t>(ds.param_dim));
  io::WritePod<std::uint32_t>(os, static_cast<std::uint32_t>(ds.schema.size()));
  for (const Channel& c : ds.schema) {
    io::WriteString(os, c.name);
    io::WritePod<std::uint8_t>(os, static_cast<std::uint8_t>(c.kind));
  }
  io::WritePod<std::uint32_t>(os, static_cast<std::uint32_t>(ds.image_height));
  io::WritePod<std::uint32_t>(os, static_cast<std::uint32_t>(ds.image_width));
  io::WritePod<double>(os, ds.dt);
  std::vector<std::uint8_t> bytes;
  for (const Record& r : ds.records) {
    if (r.params.size() != ds.param_dim || r.image.height != ds.image_height ||
        r.image.width != ds.image_width || r.plan.schema != ds.schema ||
        r.exec.schema != ds.schema) {
      throw std::invalid_argument("record does not match the dataset header");
    }
    io::WritePod<std::uint64_t>(os, r.env_seed);
    bytes.resize(r.image.pixels.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
      bytes[i] = static_cast<std::uint8_t>(std::lround(r.image.pixels[i] * 255.0f));
    }
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    os.write(reinterpret_cast<const char*>(r.params.data()),
             static_cast<std::streamsize>(r.params.size() * sizeof(double)));
    WritePoints(os, r.plan);
    WritePoints(os, r.exec);
  }
}

Dataset ReadDataset(std::istream& is) {
  char magic[4];
  io::ReadBytes(is, magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw io::FormatError("not a dataset container");
  const auto version = io::ReadPod<std::uint32_t>(is);
  if (version != DatasetFormat::kVersion) {
    throw io::FormatError("unsupported dataset version " + std::to_string(version));
  }
  Dataset ds;
  const auto count = io::ReadPod<std::uint64_t>(is);
  const auto kind = io::ReadPod<std::uint8_t>(is);
  if (kind > 1) throw io::FormatError("unknown skill kind " + std::to_string(kind));
  ds.kind = static_cast<SkillKind>(kind);
  ds.param_dim = io::ReadPod<std::uint32_t>(is);
  const auto channels = io::ReadPod<std::uint32_t>(is);
  if (ds.param_dim == 0 || ds.param_dim > kMaxDim || channels == 0 || channels > 64) {
    throw io::FormatError("implausible dataset header");
  }
  for (std::uint32_t c = 0; c < channels; ++c) {
    Channel ch;
    ch.name = io::ReadString(is, 256);
    const auto k = io::ReadPod<std::uint8_t>(is);
    if (k > 3) throw io::FormatError("unknown channel kind " + std::to_string(k));
    ch.kind = static_cast<ChannelKind>(k);
    ds.schema.push_back(std::move(ch));
  }
  ds.image_height = io::ReadPod<std::uint32_t>(is);
  ds.image_width = io::ReadPod<std::uint32_t>(is);
  ds.dt = io::ReadPod<double>(is);
  if (ds.image_height * ds.image_width > kMaxImagePixels || !(ds.dt > 0.0)) {
    throw io::FormatError("implausible image size or time step");
  }
  std::vector<std::uint8_t> bytes(ds.image_height * ds.image_width * 3);
  for (std::uint64_t i = 0; i < count; ++i) {
    Record r;
    r.env_seed = io::ReadPod<std::uint64_t>(is);
    io::ReadBytes(is, reinterpret_cast<char*>(bytes.data()), bytes.size());
    r.image = EnvImage(ds.image_height, ds.image_width);
    for (std::size_t k = 0; k < bytes.size(); ++k) r.image.pixels[k] = bytes[k] / 255.0f;
    r.params.resize(ds.param_dim);
    io::ReadBytes(is, reinterpret_cast<char*>(r.params.data()), ds.param_dim * sizeof(double));
    r.plan = ReadPoints(is, ds.schema, ds.dt);
    r.exec = ReadPoints(is, ds.schema, ds.dt);
    ds.records.push_back(std::move(r));
  }
  return ds;
}

void SaveDataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io::IoError("cannot open " + path.string() + " for writing");
  WriteDataset(os, ds);
  os.flush();
  if (!os) throw io::IoError("failed writing " + path.string());
}

Dataset LoadDataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io::IoError("cannot open " + path.string());
  try {
    return ReadDataset(is);
  } catch (const io::FormatError& e) {
    throw io::FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace trajfuse
