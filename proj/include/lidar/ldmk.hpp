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
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "lidar/numerics/autodiff.hpp"
#include "lidar/registry.hpp"

// Lightweight dynamically modulated multi-kernel convolution.
//
//   x -> 1x1 (C_in -> C_m) -> channel scores -> top-k mask
//     -> depthwise {3, 5, 7} with (1 + alpha_i) W_i + beta_i
//     -> concat (3 C_m) -> 1x1 (-> C_out) -> + residual(x)
namespace lidar::ldmk {

inline constexpr std::array<std::size_t, 3> kBranchSizes{3, 5, 7};

/// Squeeze-excite style per-channel importance: sigmoid(W2 relu(W1 avg(x))).
struct ChannelScorer {
  ad::Var w1;  // [C_m / r, C_m]
  ad::Var w2;  // [C_m, C_m / r]

  /// [B, C_m, H, W] -> [B, C_m] scores in (0, 1).
  ad::Var score(const ad::Var& features) const;
};

/// Binary mask with exactly k ones at the k largest scores. Ties go to the
/// lower channel index.
std::vector<double> select_topk_mask(std::span<const double> scores, std::size_t k);

struct EmaState {
  double rho_hat = 1.0;
  double gamma = 0.9;
  std::uint64_t steps = 0;
  std::size_t active = 0;  // k_t from the most recent update; 0 until the first one
};

/// rho_hat <- gamma rho_hat + (1 - gamma) mean(scores); returns
/// k_t = clamp(floor(channels * rho_hat), 1, channels).
std::size_t ema_update(EmaState& state, std::span<const double> scores, std::size_t channels);

struct KernelBank {
  std::array<ad::Var, 3> kernels;  // [C_m, 1, k, k] for k in kBranchSizes
  std::array<ad::Var, 3> alpha;    // [1]
  std::array<ad::Var, 3> beta;     // [1]
};

/// (1 + alpha_i) W_i + beta_i for the branch with spatial size `kernel_size`.
ad::Var reparam_kernel(const KernelBank& bank, std::size_t kernel_size);

struct LdmkConfig {
  std::size_t in_channels = 16;
  std::size_t out_channels = 16;
  std::size_t mid_channels = 0;  // 0 selects in_channels / 2
  std::size_t reduction = 4;
  double ema_gamma = 0.9;

  std::size_t mid() const { return mid_channels ? mid_channels : std::max<std::size_t>(1, in_channels / 2); }
  std::size_t hidden() const { return std::max<std::size_t>(1, mid() / reduction); }
};

enum class MaskMode {
  kBinary,  // top-k mask, constant in backward
  kSoft,    // mask = scores, so the scorer receives gradients
};

class LdmkLayer {
 public:
  LdmkLayer() = default;
  LdmkLayer(const LdmkConfig& config, Rng& rng);

  /// In training mode the EMA advances and sets k; otherwise the last k is reused.
  ad::Var forward(const ad::Var& x, bool training, MaskMode mode = MaskMode::kBinary);

  /// Channels kept by the mask on the next inference call.
  std::size_t active_channels() const;

  void collect(const std::string& prefix, StateRegistry& registry);
  std::size_t parameter_count() const;

  const LdmkConfig& config() const { return config_; }

  ad::Var entry;  // [C_m, C_in, 1, 1]
  ChannelScorer scorer;
  EmaState ema;
  KernelBank bank;
  ad::Var exit;                     // [C_out, 3 C_m, 1, 1]
  std::optional<ad::Var> residual;  // [C_out, C_in, 1, 1] when C_in != C_out

 private:
  LdmkConfig config_;
};

/// Weight count of an LdmkLayer (no biases are used anywhere in the layer).
std::size_t analytic_parameter_count(const LdmkConfig& config);
/// Weight count of a dense k x k convolution C_in -> C_out without bias.
std::size_t plain_conv_parameter_count(std::size_t in_channels, std::size_t out_channels, std::size_t kernel);

}  // namespace lidar::ldmk
