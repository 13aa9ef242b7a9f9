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

#include "trajfuse/vision.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include "trajfuse/binary_io.h"

namespace trajfuse {

void ValidateImage(const EnvImage& img) {
  if (img.height == 0 || img.width == 0 || img.height % kPatchSize != 0 ||
      img.width % kPatchSize != 0) {
    throw std::invalid_argument("image " + std::to_string(img.height) + "x" +
                                std::to_string(img.width) +
                                " is not a positive multiple of 16 in both dimensions; pad or "
                                "crop it before embedding");
  }
  if (img.pixels.size() != img.height * img.width * 3) {
    throw std::invalid_argument("image pixel buffer does not match its dimensions");
  }
  if (img.height * img.width > kMaxImagePixels) {
    throw std::invalid_argument("image exceeds the maximum of 256x256 pixels");
  }
  for (float v : img.pixels) {
    if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("pixel value outside [0, 1]");
  }
}

Matrix Patchify(const EnvImage& img) {
  ValidateImage(img);
  const std::size_t gh = img.grid_h(), gw = img.grid_w();
  Matrix patches(static_cast<Eigen::Index>(gh * gw), static_cast<Eigen::Index>(kPatchWidth));
  for (std::size_t pr = 0; pr < gh; ++pr) {
    for (std::size_t pc = 0; pc < gw; ++pc) {
      const auto row = static_cast<Eigen::Index>(pr * gw + pc);
      std::size_t k = 0;
      for (std::size_t r = 0; r < kPatchSize; ++r) {
        for (std::size_t c = 0; c < kPatchSize; ++c) {
          for (std::size_t ch = 0; ch < 3; ++ch) {
            patches(row, static_cast<Eigen::Index>(k++)) =
                img.at(pr * kPatchSize + r, pc * kPatchSize + c, ch);
          }
        }
      }
    }
  }
  return patches;
}

EnvImage Unpatchify(const Matrix& patches, std::size_t height, std::size_t width) {
  EnvImage img(height, width);
  ValidateImage(img);
  const std::size_t gw = img.grid_w();
  if (static_cast<std::size_t>(patches.rows()) != img.grid_h() * gw ||
      static_cast<std::size_t>(patches.cols()) != kPatchWidth) {
    throw std::invalid_argument("unpatchify: patch array does not match image size");
  }
  for (Eigen::Index p = 0; p < patches.rows(); ++p) {
    const std::size_t pr = static_cast<std::size_t>(p) / gw, pc = static_cast<std::size_t>(p) % gw;
    std::size_t k = 0;
    for (std::size_t r = 0; r < kPatchSize; ++r) {
      for (std::size_t c = 0; c < kPatchSize; ++c) {
        for (std::size_t ch = 0; ch < 3; ++ch) {
          img.at(pr * kPatchSize + r, pc * kPatchSize + c, ch) =
              static_cast<float>(patches(p, static_cast<Eigen::Index>(k++)));
        }
      }
    }
  }
  return img;
}

EnvImage ConcatViews(std::span<const EnvImage> views) {
  if (views.empty()) throw std::invalid_argument("concat_views: no images");
  const std::size_t h = views.front().height;
  std::size_t w = 0;
  for (const EnvImage& v : views) {
    if (v.height != h) {
      throw std::invalid_argument("concat_views: heights " + std::to_string(h) + " and " +
                                  std::to_string(v.height) + " differ");
    }
    w += v.width;
  }
  EnvImage out(h, w);
  std::size_t off = 0;
  for (const EnvImage& v : views) {
    for (std::size_t r = 0; r < h; ++r) {
      std::copy_n(v.pixels.begin() + static_cast<std::ptrdiff_t>(r * v.width * 3), v.width * 3,
                  out.pixels.begin() + static_cast<std::ptrdiff_t>((r * w + off) * 3));
    }
    off += v.width;
  }
  return out;
}

namespace {

// source coordinate of output index i under corner alignment
double SourceCoord(std::size_t i, std::size_t in, std::size_t out) {
  if (out == 1) return 0.5 * static_cast<double>(in - 1);
  return static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
}

}  // namespace

Matrix BilinearResizeMatrix(std::size_t in_h, std::size_t in_w, std::size_t out_h,
                            std::size_t out_w) {
  if (in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0) {
    throw std::invalid_argument("bilinear resize: empty grid");
  }
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(out_h * out_w),
                          static_cast<Eigen::Index>(in_h * in_w));
  for (std::size_t r = 0; r < out_h; ++r) {
    const double y = SourceCoord(r, in_h, out_h);
    const auto y0 = std::min(static_cast<std::size_t>(std::floor(y)), in_h - 1);
    const std::size_t y1 = std::min(y0 + 1, in_h - 1);
    const double fy = y - static_cast<double>(y0);
    for (std::size_t c = 0; c < out_w; ++c) {
      const double x = SourceCoord(c, in_w, out_w);
      const auto x0 = std::min(static_cast<std::size_t>(std::floor(x)), in_w - 1);
      const std::size_t x1 = std::min(x0 + 1, in_w - 1);
      const double fx = x - static_cast<double>(x0);
      const auto row = static_cast<Eigen::Index>(r * out_w + c);
      m(row, y0 * in_w + x0) += (1 - fy) * (1 - fx);
      m(row, y0 * in_w + x1) += (1 - fy) * fx;
      m(row, y1 * in_w + x0) += fy * (1 - fx);
      m(row, y1 * in_w + x1) += fy * fx;
    }
  }
  return m;
}

Value EmbedPatches(const Value& patches, const Value& projection, const Value& bias,
                   const Value& base_pos, std::size_t base_grid, std::size_t grid_h,
                   std::size_t grid_w) {
  const std::size_t n = grid_h * grid_w;
  if (patches.rank() != 2 || n == 0 || patches.rows() % n != 0) {
    throw DimensionError("embed_patches: " + ShapeString(patches.shape()) +
                         " patches do not fill a " + std::to_string(grid_h) + "x" +
                         std::to_string(grid_w) + " grid");
  }
  if (base_pos.rank() != 2 || base_pos.rows() != base_grid * base_grid) {
    throw DimensionError("embed_patches: positional table " + ShapeString(base_pos.shape()) +
                         " is not a " + std::to_string(base_grid) + "x" +
                         std::to_string(base_grid) + " grid");
  }
  Value tokens = Linear(patches, projection, bias);
  Value pos = base_pos;
  if (grid_h != base_grid || grid_w != base_grid) {
    Matrix m = BilinearResizeMatrix(base_grid, base_grid, grid_h, grid_w);
    Value resample = Value::FromVector(
        {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
        std::span<const double>(m.data(), static_cast<std::size_t>(m.size())), false,
        base_pos.dtype());
    pos = MatMul(resample, base_pos);
  }
  return AddTiled(tokens, pos);
}

void WritePpm(const EnvImage& img, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io::IoError("cannot open " + path.string() + " for writing");
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  for (float v : img.pixels) {
    const auto b = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    os.put(static_cast<char>(b));
  }
  if (!os) throw io::IoError("failed writing " + path.string());
}

EnvImage ReadPpm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io::IoError("cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255 || w == 0 || h == 0) {
    throw io::FormatError(path.string() + " is not an 8-bit binary PPM");
  }
  is.get();
  EnvImage img(h, w);
  for (float& v : img.pixels) {
    const int b = is.get();
    if (b == EOF) throw io::FormatError("truncated PPM " + path.string());
    v = static_cast<float>(b) / 255.0f;
  }
  return img;
}

}  // namespace trajfuse
