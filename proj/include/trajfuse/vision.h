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

#ifndef TRAJFUSE_VISION_H_
#define TRAJFUSE_VISION_H_

#include <filesystem>
#include <span>
#include <vector>

#include "trajfuse/tensor.h"
#include "trajfuse/trajectory.h"

namespace trajfuse {

inline constexpr std::size_t kPatchSize = 16;
inline constexpr std::size_t kPatchWidth = kPatchSize * kPatchSize * 3;  // 768
inline constexpr std::size_t kMaxImagePixels = 256 * 256;

// RGB image, channel-last, values in [0, 1].
struct EnvImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  EnvImage() = default;
  EnvImage(std::size_t h, std::size_t w) : height(h), width(w), pixels(h * w * 3, 0.0f) {}

  float& at(std::size_t r, std::size_t c, std::size_t ch) {
    return pixels[(r * width + c) * 3 + ch];
  }
  float at(std::size_t r, std::size_t c, std::size_t ch) const {
    return pixels[(r * width + c) * 3 + ch];
  }
  std::size_t grid_h() const { return height / kPatchSize; }
  std::size_t grid_w() const { return width / kPatchSize; }
  bool operator==(const EnvImage&) const = default;
};

void ValidateImage(const EnvImage& img);

// Row-major patches, each flattened channel-last: (H/16 * W/16) x 768.
Matrix Patchify(const EnvImage& img);
EnvImage Unpatchify(const Matrix& patches, std::size_t height, std::size_t width);

// Horizontal concatenation of equally tall views.
EnvImage ConcatViews(std::span<const EnvImage> views);

// (out_h*out_w) x (in_h*in_w) bilinear resampling weights, corner-aligned.
// A single output row/column samples the center of the input.
Matrix BilinearResizeMatrix(std::size_t in_h, std::size_t in_w, std::size_t out_h,
                            std::size_t out_w);

// tokens = patches * projection + bias + positions resampled from the
// base_grid x base_grid table to grid_h x grid_w
Value EmbedPatches(const Value& patches, const Value& projection, const Value& bias,
                   const Value& base_pos, std::size_t base_grid, std::size_t grid_h,
                   std::size_t grid_w);

// Binary PPM (P6, maxval 255).
void WritePpm(const EnvImage& img, const std::filesystem::path& path);
EnvImage ReadPpm(const std::filesystem::path& path);

}  // namespace trajfuse

#endif  // TRAJFUSE_VISION_H_
