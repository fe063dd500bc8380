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

#pragma once

#include <optional>
#include <vector>

#include "lidar/ldmk.hpp"

// Dual-domain fusion: frequency gating per modality, RGB-anchored modality
// fusion, cross-scale gating and the segmentation head.
namespace lidar::ld3cf {

/// Per-axis normalised distance of each half-spectrum bin from zero
/// frequency: vertical min(u, H - u) / (H / 2), horizontal v / (W / 2).
struct SpectralDistance {
  Tensor horizontal;  // [1, 1, H, W/2 + 1]
  Tensor vertical;    // [1, 1, H, W/2 + 1]
};
SpectralDistance spectral_distance(std::size_t height, std::size_t width);

struct SoftMasks {
  ad::Var high_h;
  ad::Var high_v;
  ad::Var low;  // 1 - max(high_h, high_v)
};

/// sigmoid(tau (d - r)) per axis; r and tau are [1] tensors.
SoftMasks soft_masks(const SpectralDistance& dist, const ad::Var& radius, const ad::Var& tau);

/// Plain split of x into low and high bands with the soft masks at fixed
/// (r, tau); the high band uses max(high_h, high_v) so low + high == x.
struct BandSplit {
  Tensor low;
  Tensor high;
};
BandSplit band_split(const Tensor& x, double radius, double tau);

/// Components of an AFDP output, summed to form forward().
struct AfdpParts {
  ad::Var residual;  // x * a
  ad::Var high;      // g_h * high_h + g_v * high_v
  ad::Var low;       // s_low * low
};

class AfdpLayer {
 public:
  AfdpLayer() = default;
  AfdpLayer(std::size_t channels, const ldmk::LdmkConfig& band_config, Rng& rng);

  AfdpParts forward_parts(const ad::Var& x, bool training);
  ad::Var forward(const ad::Var& x, bool training);
  void collect(const std::string& prefix, StateRegistry& registry);

  double radius() const { return radius_param.value()[0]; }
  double tau() const;

  ad::Var conv_h;  // [2C, 1, 1, 3] depthwise over real and imaginary planes
  ad::Var conv_v;  // [2C, 1, 3, 1]
  ad::Var bn_h_gamma, bn_h_beta, bn_v_gamma, bn_v_beta;  // [2C]
  ad::BatchNormStats bn_h_stats, bn_v_stats;
  ad::Var radius_param;  // [1]
  ad::Var log_tau;       // [1]
  std::array<ldmk::LdmkLayer, 3> refine;  // high_h, high_v, low
  ad::Var gate_h_weight, gate_h_bias;     // [C, C, 1, 1], [C]
  ad::Var gate_v_weight, gate_v_bias;
  ad::Var attention_weight, attention_bias;  // [C, 3C], [C]
  ad::Var low_scale;                         // [1]
};

/// Channel attention on RGB features plus dual-pool auxiliary fusion.
class DualPoolFusion {
 public:
  DualPoolFusion() = default;
  DualPoolFusion(std::size_t channels, std::size_t aux_modalities, const ldmk::LdmkConfig& config, Rng& rng);

  /// rgb * sigmoid(Linear(AvgPool(rgb))).
  ad::Var rgb_enhance(const ad::Var& rgb) const;
  /// LDMK_l(w1 avg3(rgb + aux) + wmax max3(rgb + aux)).
  ad::Var fuse_modality(const ad::Var& rgb_enhanced, const ad::Var& aux, std::size_t l, bool training);
  /// w1 avg3(s) + wmax max3(s) without the LDMK transform.
  ad::Var dual_pool(const ad::Var& rgb_enhanced, const ad::Var& aux) const;

  void collect(const std::string& prefix, StateRegistry& registry);

  ad::Var rgb_weight, rgb_bias;  // [C, C], [C]
  ad::Var w_avg, w_max;          // [1]
  std::vector<ldmk::LdmkLayer> transforms;
};

/// rgb + sum of fused maps. Each element is accumulated in ascending value
/// order so that any permutation of `fused` gives a bit-identical result.
ad::Var sum_modalities(const ad::Var& rgb_enhanced, const std::vector<ad::Var>& fused);

class CrossScaleGate {
 public:
  CrossScaleGate() = default;
  CrossScaleGate(std::size_t channels, std::size_t levels, Rng& rng);

  /// Level 0 passes `current` through; later levels blend with `previous`
  /// using G = sigmoid(Linear(AvgPool(previous))).
  ad::Var forward(const ad::Var& current, const std::optional<ad::Var>& previous, std::size_t level) const;
  void collect(const std::string& prefix, StateRegistry& registry);

  std::vector<ad::Var> weights;  // level n >= 1 -> [C, C]
  std::vector<ad::Var> biases;   // [C]
};

class SegHead {
 public:
  SegHead() = default;
  SegHead(std::size_t channels, std::size_t levels, Rng& rng);

  /// Levels -> common size -> weighted sum -> per-pixel linear -> 1x1 to one
  /// channel -> bilinear to (out_h, out_w) -> sigmoid.
  ad::Var forward(const std::vector<ad::Var>& levels, std::size_t out_h, std::size_t out_w) const;
  /// Same as forward() without the final sigmoid.
  ad::Var logits(const std::vector<ad::Var>& levels, std::size_t out_h, std::size_t out_w) const;
  void collect(const std::string& prefix, StateRegistry& registry);

  ad::Var level_weights;  // [L], uniform 1 / L at init
  ad::Var linear_weight, linear_bias;  // [C, C, 1, 1], [C]
  ad::Var out_weight, out_bias;        // [1, C, 1, 1], [1]
};

}  // namespace lidar::ld3cf
