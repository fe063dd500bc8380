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

#include <array>
#include <vector>

#include "lidar/edgss.hpp"
#include "lidar/ldmk.hpp"

// Visual state-space block driven by per-image scan orders.
namespace lidar::lacavss {

/// Dual-pooling denoiser: relu(GroupNorm(LDMK(avg3(x) + max3(x)))) + x.
class DpddLayer {
 public:
  DpddLayer() = default;
  DpddLayer(std::size_t channels, std::size_t groups, const ldmk::LdmkConfig& inner, Rng& rng);

  ad::Var forward(const ad::Var& x, bool training);
  void collect(const std::string& prefix, StateRegistry& registry);

  ldmk::LdmkLayer ldmk;
  ad::Var gn_gamma;  // [C]
  ad::Var gn_beta;   // [C]
  std::size_t groups = 1;
};

/// avg3(x) + max3(x) with stride 1 and same padding.
ad::Var dual_pool(const ad::Var& x);

/// Discretised diagonal linear state space, one set per scan direction.
///   h_k = exp(a) h_{k-1} + phi(a) b x_k,   phi(a) = (exp(a) - 1) / a
///   y_k = sum_n c h_k + d x_k
struct SsmParams {
  ad::Var a;       // [D, N]  continuous-time transition (diagonal)
  ad::Var b;       // [D, N]
  ad::Var c;       // [D, N]  readout
  ad::Var d_skip;  // [D]
};

/// Below this magnitude phi(a) and phi'(a) switch to their Taylor series.
inline constexpr double kSeriesSwitch = 1e-4;

/// phi(a) = (e^a - 1) / a with phi(0) = 1.
double zoh_phi(double a);
/// d phi / d a.
double zoh_phi_grad(double a);
/// Closed form only; undefined at a == 0. Exposed for continuity tests.
double zoh_phi_closed(double a);
double zoh_phi_series(double a);

/// tokens [B, L, D] -> [B, L, D]; h_0 = 0 for every sequence in the batch.
ad::Var selective_scan(const ad::Var& tokens, const SsmParams& params);

/// Per-batch (or one shared) scan order expanded from patch ids to tokens.
using TokenOrders = std::vector<std::vector<std::size_t>>;

/// Patch order -> token order when each patch owns `area` consecutive tokens.
std::vector<std::size_t> expand_order(std::span<const std::size_t> patch_order, std::size_t area);

struct DirPosEmbedding {
  std::array<ad::Var, 4> direction;  // [D] each, in h_tb, h_bt, v_tb, v_bt order
  ad::Var position;                  // [L, D], indexed by post-reorder position
};

/// tokens[order] + direction + position.
ad::Var embed_sequence(const ad::Var& tokens, const TokenOrders& orders, const ad::Var& direction,
                       const ad::Var& position);

/// Inverse-reorders each directional output, sums them and applies x W^T + bias.
ad::Var merge_directions(const std::array<ad::Var, 4>& outputs, const std::array<TokenOrders, 4>& orders,
                         const ad::Var& weight, const ad::Var& bias);

struct LacaVssConfig {
  std::size_t channels = 16;
  std::size_t tokens = 64;  // H * W of the feature map the block runs on
  std::size_t state_dim = 8;
  std::size_t groups = 4;
  std::size_t reduction = 4;
  double ema_gamma = 0.9;
};

class LacaVssBlock {
 public:
  LacaVssBlock() = default;
  LacaVssBlock(const LacaVssConfig& config, Rng& rng);

  /// x [B, C, H, W]; `bundles` holds one bundle per batch element or a single
  /// shared one. The bundle length fixes the cell size sqrt(H W / length).
  ad::Var forward(const ad::Var& x, const std::vector<const edgss::ScanBundle*>& bundles, bool training);

  void collect(const std::string& prefix, StateRegistry& registry);
  const LacaVssConfig& config() const { return config_; }

  std::array<DpddLayer, 2> dpdd;
  DirPosEmbedding embedding;
  std::array<SsmParams, 4> ssm;
  ad::Var merge_weight;  // [C, C]
  ad::Var merge_bias;    // [C]
  ad::Var gate_weight;   // [C, C]
  ad::Var gate_bias;     // [C]

 private:
  LacaVssConfig config_;
};

/// Side length of the square token cell implied by a map and a bundle length.
std::size_t cell_size(std::size_t height, std::size_t width, std::size_t patches);

}  // namespace lidar::lacavss
