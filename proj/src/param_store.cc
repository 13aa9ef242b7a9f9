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

#include "trajfuse/param_store.h"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "trajfuse/binary_io.h"

namespace trajfuse {
namespace {
constexpr char kMagic[4] = {'T', 'F', 'P', 'S'};
}  // namespace

Value& ParamStore::Add(const std::string& name, Value value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_[name] = entries_.size();
  entries_.emplace_back(name, std::move(value));
  return entries_.back().second;
}

bool ParamStore::Contains(const std::string& name) const { return index_.count(name) > 0; }

const Value& ParamStore::Get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return entries_[it->second].second;
}

Value& ParamStore::Get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return entries_[it->second].second;
}

std::size_t ParamStore::NumScalars() const {
  std::size_t n = 0;
  for (const auto& [name, v] : entries_) n += v.size();
  return n;
}

void ParamStore::ZeroGrad() {
  for (auto& [name, v] : entries_) v.ZeroGrad();
}

ParamStore ParamStore::Clone() const {
  ParamStore out;
  for (const auto& [name, v] : entries_) out.Add(name, v.Detach(v.requires_grad()));
  return out;
}

ParamStore ParamStore::CastTo(DType dtype) const {
  ParamStore out;
  for (const auto& [name, v] : entries_) out.Add(name, v.Cast(dtype));
  return out;
}

void ParamStore::SetRequiresGrad(bool requires_grad) {
  for (auto& [name, v] : entries_) v.node()->requires_grad = requires_grad;
}

void ParamStore::Write(std::ostream& os) const {
  os.write(kMagic, 4);
  io::WritePod<std::uint32_t>(os, kFormatVersion);
  io::WritePod<std::uint32_t>(os, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [name, v] : entries_) {
    io::WriteString(os, name);
    io::WritePod<std::uint8_t>(os, static_cast<std::uint8_t>(v.dtype()));
    io::WritePod<std::uint32_t>(os, static_cast<std::uint32_t>(v.rank()));
    for (std::size_t d : v.shape()) io::WritePod<std::uint64_t>(os, d);
    if (v.dtype() == DType::kFloat32) {
      for (float x : v.data<float>()) io::WritePod<float>(os, x);
    } else {
      for (double x : v.data<double>()) io::WritePod<double>(os, x);
    }
  }
  if (!os) throw io::IoError("failed writing parameter store");
}

ParamStore ParamStore::Read(std::istream& is) {
  char magic[4];
  io::ReadBytes(is, magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw io::FormatError("not a parameter store");
  const auto version = io::ReadPod<std::uint32_t>(is);
  if (version != kFormatVersion) {
    throw io::FormatError("unsupported parameter store version " + std::to_string(version));
  }
  const auto count = io::ReadPod<std::uint32_t>(is);
  ParamStore store;
  for (std::uint32_t e = 0; e < count; ++e) {
    std::string name = io::ReadString(is);
    const auto tag = io::ReadPod<std::uint8_t>(is);
    if (tag != static_cast<std::uint8_t>(DType::kFloat32) &&
        tag != static_cast<std::uint8_t>(DType::kFloat64)) {
      throw io::FormatError("bad dtype tag for " + name);
    }
    const auto rank = io::ReadPod<std::uint32_t>(is);
    if (rank > 8) throw io::FormatError("implausible rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = io::ReadPod<std::uint64_t>(is);
    Value v = Value::Zeros(shape, true, static_cast<DType>(tag));
    if (v.dtype() == DType::kFloat32) {
      for (float& x : v.data<float>()) x = io::ReadPod<float>(is);
    } else {
      for (double& x : v.data<double>()) x = io::ReadPod<double>(is);
    }
    store.Add(name, std::move(v));
  }
  return store;
}

std::uint64_t ParamStore::Hash() const {
  std::ostringstream os;
  Write(os);
  return io::Fnv1a(os.str());
}

Value GlorotUniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> w(fan_in * fan_out);
  for (double& x : w) x = rng.Uniform(-limit, limit);
  return Value::FromVector({fan_in, fan_out}, w, true);
}

Value NormalInit(const Shape& shape, double stddev, Rng& rng) {
  std::vector<double> w(NumElements(shape));
  for (double& x : w) x = stddev * rng.Normal();
  return Value::FromVector(shape, w, true);
}

}  // namespace trajfuse
