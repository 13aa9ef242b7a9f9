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

#ifndef TRAJFUSE_PARAM_STORE_H_
#define TRAJFUSE_PARAM_STORE_H_

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "trajfuse/random.h"
#include "trajfuse/tensor.h"

namespace trajfuse {

// Named learnable values, iterated in insertion order.
//
// Binary layout (little-endian):
//   magic "TFPS" | u32 version | u32 entry count |
//   per entry: u32 name length | name bytes | u8 dtype tag | u32 rank |
//              u64 dims[rank] | raw data (4 or 8 bytes per element)
class ParamStore {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  Value& Add(const std::string& name, Value value);
  bool Contains(const std::string& name) const;
  const Value& Get(const std::string& name) const;
  Value& Get(const std::string& name);

  std::size_t size() const { return entries_.size(); }
  std::size_t NumScalars() const;
  const std::vector<std::pair<std::string, Value>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Value>>& entries() { return entries_; }

  void ZeroGrad();
  // deep copy; the copy's values are fresh leaves
  ParamStore Clone() const;
  ParamStore CastTo(DType dtype) const;
  // freezes (or unfreezes) every value
  void SetRequiresGrad(bool requires_grad);

  void Write(std::ostream& os) const;
  static ParamStore Read(std::istream& is);

  // FNV-1a over the serialized bytes
  std::uint64_t Hash() const;

 private:
  std::vector<std::pair<std::string, Value>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// fan-averaged uniform init for a [fan_in x fan_out] weight
Value GlorotUniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);
Value NormalInit(const Shape& shape, double stddev, Rng& rng);

}  // namespace trajfuse

#endif  // TRAJFUSE_PARAM_STORE_H_
