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

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "lidar/lacavss.hpp"
#include "lidar/ld3cf.hpp"

// Full multimodal segmentation network and its on-disk checkpoint.
namespace lidar::model {

struct LidarConfig {
  std::size_t patch = 8;
  std::size_t stages = 4;
  std::size_t width = 16;
  std::size_t height_px = 64;
  std::size_t width_px = 64;
  std::vector<std::size_t> modality_channels{3, 1};  // index 0 is RGB
  std::size_t state_dim = 8;
  std::size_t groups = 4;
  std::size_t reduction = 4;
  double ema_gamma = 0.9;
  double dice_eps = 1.0;

  std::size_t modalities() const { return modality_channels.size(); }
  std::size_t grid_h() const { return height_px / patch; }
  std::size_t grid_w() const { return width_px / patch; }
  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;

  nlohmann::json to_json() const;
  static LidarConfig from_json(const nlohmann::json& j);
  /// FNV-1a of the compact JSON form, as 16 hex digits.
  std::string hash() const;
};

/// Scalar config keys accepted by set_config_value, in a fixed order.
const std::vector<std::string>& config_keys();
/// Applies key=value. Unknown keys throw std::invalid_argument with the
/// closest known key; modality_channels takes a comma-separated list.
void set_config_value(LidarConfig& config, const std::string& key, const std::string& value);
/// Closest candidate by edit distance, or "" if nothing is reasonably near.
std::string closest_key(const std::string& key, const std::vector<std::string>& candidates);

/// Non-overlapping p x p patches of `image` projected to `weight.dim(0)`
/// channels: [B, C_in, H, W] -> [B, C, H/p, W/p].
ad::Var patch_embed(const ad::Var& image, std::size_t patch, const ad::Var& weight, const ad::Var& bias);

struct Stream {
  ad::Var embed_weight;  // [C, C_in p p]
  ad::Var embed_bias;    // [C]
  std::vector<lacavss::LacaVssBlock> stages;
};

struct Level {
  std::vector<ld3cf::AfdpLayer> afdp;  // one per modality
  ld3cf::DualPoolFusion fusion;
};

class LidarModel {
 public:
  LidarModel() = default;
  LidarModel(const LidarConfig& config, std::uint64_t seed);

  /// inputs[m] is [B, C_m, H, W]; bundles holds one per batch element or a
  /// single shared one. Returns probabilities [B, 1, H, W].
  ad::Var forward(const std::vector<ad::Var>& inputs, const std::vector<const edgss::ScanBundle*>& bundles,
                  bool training);
  ad::Var forward_logits(const std::vector<ad::Var>& inputs, const std::vector<const edgss::ScanBundle*>& bundles,
                         bool training);

  /// Reorders auxiliary modalities (indices 1..M-1) together with their
  /// parameters; perm is over auxiliary positions 0..M-2.
  void permute_auxiliary(const std::vector<std::size_t>& perm);

  void collect(StateRegistry& registry);
  const LidarConfig& config() const { return config_; }

  std::vector<Stream> streams;
  std::vector<Level> levels;
  ld3cf::CrossScaleGate gate;
  ld3cf::SegHead head;

 private:
  LidarConfig config_;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

nlohmann::json checkpoint_json(LidarModel& model);
LidarModel model_from_checkpoint(const nlohmann::json& j);
void save_checkpoint(LidarModel& model, const std::filesystem::path& path);
LidarModel load_checkpoint(const std::filesystem::path& path);

struct ParamReport {
  struct Row {
    std::string module;
    std::size_t count;
  };
  struct Comparison {
    std::size_t channels;
    std::size_t mid;
    std::size_t reduction;
    std::size_t ldmk;
    std::size_t plain3x3;
  };
  std::vector<Row> modules;
  std::size_t total = 0;
  std::vector<Comparison> comparisons;
};

ParamReport param_report(LidarModel& model);
std::string format_param_report(const ParamReport& report);

}  // namespace lidar::model
