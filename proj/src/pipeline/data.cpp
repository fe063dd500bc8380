// Copyright 2026 The LIDAR Desk Authors
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

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <set>

#include "lidar/pipeline.hpp"

namespace lidar::pipeline {

namespace {

double quantize(double v) { return std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5) / 255.0; }

void stamp_disc(std::vector<std::uint8_t>& mask, std::size_t H, std::size_t W, double cx, double cy, double r) {
  const long r0 = static_cast<long>(std::floor(cy - r)), r1 = static_cast<long>(std::ceil(cy + r));
  const long c0 = static_cast<long>(std::floor(cx - r)), c1 = static_cast<long>(std::ceil(cx + r));
  for (long i = std::max(0L, r0); i <= std::min<long>(H - 1, r1); ++i) {
    for (long j = std::max(0L, c0); j <= std::min<long>(W - 1, c1); ++j) {
      // Pixel centres at (j + 0.5, i + 0.5).
      const double dx = j + 0.5 - cx, dy = i + 0.5 - cy;
      if (dx * dx + dy * dy <= r * r) mask[i * W + j] = 1;
    }
  }
}

std::vector<std::uint8_t> crack_skeleton(const SyntheticSpec& s, Rng& rng) {
  const std::size_t H = s.height, W = s.width;
  std::vector<std::uint8_t> mask(H * W, 0);
  std::uniform_int_distribution<std::size_t> n_cracks(s.cracks_min, s.cracks_max);
  std::uniform_int_distribution<std::size_t> n_steps(s.steps_min, s.steps_max);
  std::uniform_real_distribution<double> ux(0.0, static_cast<double>(W)), uy(0.0, static_cast<double>(H));
  std::uniform_real_distribution<double> angle0(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> width(s.width_min, s.width_max);
  std::normal_distribution<double> turn(0.0, s.turn_stddev);
  const std::size_t cracks = n_cracks(rng);
  for (std::size_t k = 0; k < cracks; ++k) {
    double x = ux(rng), y = uy(rng), a = angle0(rng);
    const double r = 0.5 * width(rng);
    const std::size_t steps = n_steps(rng);
    for (std::size_t t = 0; t < steps; ++t) {
      stamp_disc(mask, H, W, x, y, r);
      a += turn(rng);
      x += std::cos(a);
      y += std::sin(a);
      if (x < 0.0 || x >= static_cast<double>(W)) {
        a = std::numbers::pi - a;
        x = std::clamp(x, 0.0, static_cast<double>(W) - 1e-9);
      }
      if (y < 0.0 || y >= static_cast<double>(H)) {
        a = -a;
        y = std::clamp(y, 0.0, static_cast<double>(H) - 1e-9);
      }
    }
  }
  return mask;
}

// Smooth background variation from a few random low-frequency waves.
std::vector<double> blotches(std::size_t H, std::size_t W, double amplitude, Rng& rng) {
  std::uniform_real_distribution<double> freq(0.5, 2.5), phase(0.0, 2.0 * std::numbers::pi);
  std::vector<double> out(H * W, 0.0);
  for (int w = 0; w < 3; ++w) {
    const double fx = freq(rng), fy = freq(rng), ph = phase(rng);
    for (std::size_t i = 0; i < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        out[i * W + j] += amplitude / 3.0 *
                          std::sin(2.0 * std::numbers::pi * (fx * j / W + fy * i / H) + ph);
      }
    }
  }
  return out;
}

Tensor render(const ModalityRender& m, const SyntheticSpec& s, const std::vector<std::uint8_t>& mask, Rng& rng) {
  const std::size_t H = s.height, W = s.width;
  Tensor t({1, m.channels, H, W});
  std::normal_distribution<double> noise(0.0, s.texture_noise);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (m.name == "rgb") {
    const double base = 0.5 + 0.2 * u(rng);
    std::vector<double> tint(m.channels);
    for (auto& v : tint) v = 0.06 * (u(rng) - 0.5);
    const auto blot = blotches(H, W, 0.08, rng);
    for (std::size_t c = 0; c < m.channels; ++c) {
      for (std::size_t p = 0; p < H * W; ++p) {
        const double bg = base + tint[c] + blot[p] + noise(rng);
        const double v = mask[p] ? 0.35 * base + 0.5 * noise(rng) : bg;
        t[c * H * W + p] = quantize(v);
      }
    }
  } else if (m.name == "polar") {
    for (std::size_t c = 0; c < m.channels; ++c) {
      for (std::size_t p = 0; p < H * W; ++p) {
        t[c * H * W + p] = quantize(0.45 + (mask[p] ? s.polar_contrast : 0.0) + noise(rng));
      }
    }
  } else {
    // Pseudo-depth: a tilted plane with the crack recessed below it.
    const double a = 0.55 + 0.1 * (u(rng) - 0.5), gx = 0.2 * (u(rng) - 0.5), gy = 0.2 * (u(rng) - 0.5);
    for (std::size_t c = 0; c < m.channels; ++c) {
      for (std::size_t i = 0; i < H; ++i) {
        for (std::size_t j = 0; j < W; ++j) {
          const std::size_t p = i * W + j;
          const double plane = a + gx * (static_cast<double>(j) / W - 0.5) + gy * (static_cast<double>(i) / H - 0.5);
          const double v = plane - (mask[p] ? s.depth_offset * (0.7 + 0.3 * u(rng)) : 0.0) + 0.3 * noise(rng);
          t[c * H * W + p] = quantize(v);
        }
      }
    }
  }
  return t;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& s) {
  if (s.height < 8 || s.width < 8) {
    throw std::invalid_argument("generate_synthetic: resolution " + std::to_string(s.height) + "x" +
                                std::to_string(s.width) + " is below 8x8");
  }
  if (s.modalities.empty() || s.modalities[0].name != "rgb") {
    throw std::invalid_argument("generate_synthetic: modality 0 must be rgb");
  }
  if (s.cracks_min > s.cracks_max || s.steps_min > s.steps_max || !(s.width_min > 0.0) ||
      s.width_min > s.width_max) {
    throw std::invalid_argument("generate_synthetic: inverted or empty crack ranges");
  }
  std::set<std::string> names;
  for (const auto& m : s.modalities) {
    if (m.channels != 1 && m.channels != 3) {
      throw std::invalid_argument("generate_synthetic: modality " + m.name + " must have 1 or 3 channels");
    }
    if (!names.insert(m.name).second) throw std::invalid_argument("generate_synthetic: duplicate modality " + m.name);
  }
  Dataset d;
  for (const auto& m : s.modalities) d.modalities.push_back(m.name);
  Rng rng(s.seed);
  for (std::size_t k = 0; k < s.count; ++k) {
    Sample sample;
    char id[32];
    std::snprintf(id, sizeof id, "syn%04zu", k);
    sample.id = id;
    const auto mask = crack_skeleton(s, rng);
    for (const auto& m : s.modalities) sample.images.push_back(render(m, s, mask, rng));
    sample.gt = Tensor({1, 1, s.height, s.width});
    for (std::size_t p = 0; p < mask.size(); ++p) sample.gt[p] = mask[p];
    d.samples.push_back(std::move(sample));
  }
  return d;
}

edgss::BinaryMask gt_mask(const Sample& sample) {
  return edgss::BinaryMask::from_doubles(sample.gt.dim(2), sample.gt.dim(3), sample.gt.data(), sample.id);
}

Image8 to_image(const Tensor& t) {
  require_4d(t, "to_image");
  const std::size_t C = t.dim(1), H = t.dim(2), W = t.dim(3);
  if (t.dim(0) != 1 || (C != 1 && C != 3)) {
    throw ShapeError("to_image: expected [1, 1 or 3, H, W], got " + lidar::to_string(t.shape()));
  }
  Image8 img{H, W, C, std::vector<std::uint8_t>(H * W * C)};
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t p = 0; p < H * W; ++p) {
      const double v = std::clamp(t[c * H * W + p], 0.0, 1.0);
      img.pixels[p * C + c] = static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
    }
  }
  return img;
}

Tensor from_image(const Image8& img) {
  Tensor t({1, img.channels, img.height, img.width});
  const std::size_t HW = img.height * img.width;
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t p = 0; p < HW; ++p) t[c * HW + p] = img.pixels[p * img.channels + c] / 255.0;
  }
  return t;
}

Image8 read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw DataError("read_png: " + path.string() + ": " + image.message);
  }
  const bool color = image.format & PNG_FORMAT_FLAG_COLOR;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image8 out{image.height, image.width, color ? 3u : 1u, {}};
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw DataError("read_png: " + path.string() + ": " + msg);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image8& img) {
  if (img.channels != 1 && img.channels != 3) throw DataError("write_png: channels must be 1 or 3");
  if (img.pixels.size() != img.height * img.width * img.channels) throw DataError("write_png: pixel buffer size");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
    throw DataError("write_png: " + path.string() + ": " + image.message);
  }
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& s : data.samples) {
    for (std::size_t m = 0; m < data.modalities.size(); ++m) {
      write_png(dir / (s.id + "_" + data.modalities[m] + ".png"), to_image(s.images[m]));
    }
    write_png(dir / (s.id + "_gt.png"), to_image(s.gt));
  }
}

LoadResult load_dataset(const std::filesystem::path& dir, const std::vector<std::string>& modalities) {
  if (!std::filesystem::is_directory(dir)) throw DataError("load_dataset: " + dir.string() + " is not a directory");
  if (modalities.empty()) throw DataError("load_dataset: no modalities requested");
  std::vector<std::string> ids;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    const std::string suffix = "_gt.png";
    if (name.size() > suffix.size() && name.ends_with(suffix)) ids.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(ids.begin(), ids.end());
  LoadResult result;
  result.data.modalities = modalities;
  for (const auto& id : ids) {
    try {
      Sample s;
      s.id = id;
      const Image8 gt = read_png(dir / (id + "_gt.png"));
      if (gt.channels != 1) throw DataError("ground truth must be grayscale");
      s.gt = Tensor({1, 1, gt.height, gt.width});
      for (std::size_t p = 0; p < gt.pixels.size(); ++p) s.gt[p] = gt.pixels[p] >= 128 ? 1.0 : 0.0;
      for (const auto& m : modalities) {
        const Image8 img = read_png(dir / (id + "_" + m + ".png"));
        if (img.height != gt.height || img.width != gt.width) {
          throw DataError(m + " is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                          " but the ground truth is " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
        }
        s.images.push_back(from_image(img));
      }
      result.data.samples.push_back(std::move(s));
    } catch (const std::exception& e) {
      result.errors.push_back(id + ": " + e.what());
    }
  }
  return result;
}

}  // namespace lidar::pipeline
