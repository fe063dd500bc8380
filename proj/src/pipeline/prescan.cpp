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

#include "lidar/pipeline.hpp"

namespace lidar::pipeline {

std::string to_string(MaskSource source) { return source == MaskSource::kOtsu ? "otsu" : "gt-dilate"; }

MaskSource parse_mask_source(const std::string& text) {
  if (text == "gt-dilate") return MaskSource::kGtDilate;
  if (text == "otsu") return MaskSource::kOtsu;
  throw std::invalid_argument("unknown mask source '" + text + "' (expected gt-dilate or otsu)");
}

edgss::BinaryMask guidance_mask(const Sample& sample, MaskSource source) {
  if (source == MaskSource::kGtDilate) {
    edgss::BinaryMask m = edgss::dilate(gt_mask(sample), kDilateElement);
    m.id = sample.id;
    return m;
  }
  if (sample.images.empty()) throw std::invalid_argument("guidance_mask: sample " + sample.id + " has no RGB image");
  const Tensor& rgb = sample.images[0];
  const std::size_t C = rgb.dim(1), H = rgb.dim(2), W = rgb.dim(3);
  std::vector<double> gray(H * W, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t p = 0; p < H * W; ++p) gray[p] += rgb[c * H * W + p];
  }
  for (auto& g : gray) g = std::round(g / static_cast<double>(C) * 255.0);
  return edgss::otsu_mask(H, W, gray, sample.id);
}

edgss::ScanCache prescan(const Dataset& data, MaskSource source, std::size_t patch) {
  edgss::ScanCache cache(patch);
  for (const auto& s : data.samples) cache.insert(s.id, edgss::scan_mask(guidance_mask(s, source), patch));
  return cache;
}

edgss::ScanBundle resolve_bundle(const edgss::ScanCache* cache, const Sample& sample, MaskSource source,
                                 std::size_t patch, bool strict, const WarnFn& warn) {
  const edgss::BinaryMask mask = guidance_mask(sample, source);
  std::string problem;
  if (!cache) {
    problem = "no scan cache loaded for " + sample.id;
  } else if (cache->patch_size() != patch) {
    problem = "scan cache patch size " + std::to_string(cache->patch_size()) + " differs from model patch " +
              std::to_string(patch);
  } else {
    const auto hit = cache->lookup(sample.id, mask.hash());
    if (hit.status == edgss::ScanCache::Status::kHit) return *hit.bundle;
    problem = hit.message;
  }
  if (strict) throw edgss::CacheError(problem);
  if (warn) warn(problem + "; generating the scan on the fly");
  return edgss::scan_mask(mask, patch);
}

}  // namespace lidar::pipeline
