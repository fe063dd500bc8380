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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "lidar/edgss.hpp"
#include "lidar/model.hpp"

// Losses, metrics, data, scan prescanning and the training loop.
namespace lidar::pipeline {

// ---------------------------------------------------------------- losses

struct LossTerms {
  ad::Var dice;
  ad::Var bce;
  ad::Var total;  // dice + bce
};

inline constexpr double kBceClamp = 1e-7;

/// 1 - (2 sum(p t) + eps) / (sum p + sum t + eps).
ad::Var dice_loss(const ad::Var& pred, const Tensor& target, double eps = 1.0);
/// Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7];
/// clamped pixels receive no gradient.
ad::Var bce_loss(const ad::Var& pred, const Tensor& target);
LossTerms loss_terms(const ad::Var& pred, const Tensor& target, double dice_eps = 1.0);

// --------------------------------------------------------------- metrics

struct MetricReport {
  double ods = 0.0;   // max over t of the mean per-image F1 at t
  double ois = 0.0;   // mean over images of the per-image best F1
  double f1 = 0.0;    // mean per-image F1 at 0.5
  double miou = 0.0;  // mean of foreground and background IoU at 0.5, pooled
  double ods_threshold = 0.0;
  std::vector<double> thresholds;
};

/// 0.01, 0.02, ..., 0.99.
std::vector<double> default_thresholds();

/// F1 of (pred >= t) against a binary target; 1 when both are empty.
double f1_at(const Tensor& pred, const Tensor& target, double threshold);

/// Throws std::invalid_argument on empty or misaligned inputs.
MetricReport compute_metrics(const std::vector<Tensor>& preds, const std::vector<Tensor>& targets,
                             const std::vector<double>& thresholds = default_thresholds());

std::string metrics_csv(const MetricReport& report);

// ------------------------------------------------------------------ data

struct ModalityRender {
  std::string name;
  std::size_t channels = 1;
};

struct SyntheticSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t count = 32;
  std::size_t cracks_min = 1;
  std::size_t cracks_max = 2;
  std::size_t steps_min = 40;
  std::size_t steps_max = 90;
  double turn_stddev = 0.25;  // radians per unit step
  double width_min = 3.0;     // crack width in pixels
  double width_max = 6.0;
  double texture_noise = 0.06;
  double depth_offset = 0.35;
  double polar_contrast = 0.3;
  std::vector<ModalityRender> modalities{{"rgb", 3}, {"depth", 1}};
  std::uint64_t seed = 0;
};

struct Sample {
  std::string id;
  std::vector<Tensor> images;  // per modality [1, C_m, H, W], values k / 255
  Tensor gt;                   // [1, 1, H, W] binary
};

struct Dataset {
  std::vector<std::string> modalities;
  std::vector<Sample> samples;
};

/// Random-walk crack skeletons stamped with discs; modality 0 must be "rgb".
/// Extra modalities named "depth" or "polar" get their own rendering,
/// anything else is rendered like depth.
Dataset generate_synthetic(const SyntheticSpec& spec);

edgss::BinaryMask gt_mask(const Sample& sample);

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Image8 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;  // 1 or 3
  std::vector<std::uint8_t> pixels;  // interleaved, row-major
};

Image8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image8& image);

/// [1, C, H, W] in [0, 1] -> 8-bit with round-half-up; C must be 1 or 3.
Image8 to_image(const Tensor& t);
Tensor from_image(const Image8& image);

/// Writes <id>_<modality>.png and <id>_gt.png for every sample.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);

struct LoadResult {
  Dataset data;
  std::vector<std::string> errors;  // one per unreadable image group
};
/// Discovers ids from *_gt.png. Groups with unreadable or inconsistent
/// files are reported in `errors` and skipped.
LoadResult load_dataset(const std::filesystem::path& dir, const std::vector<std::string>& modalities);

// --------------------------------------------------------------- prescan

enum class MaskSource { kGtDilate, kOtsu };
std::string to_string(MaskSource source);
MaskSource parse_mask_source(const std::string& text);

inline constexpr std::size_t kDilateElement = 5;

/// The guidance mask of a sample under `source`.
edgss::BinaryMask guidance_mask(const Sample& sample, MaskSource source);

edgss::ScanCache prescan(const Dataset& data, MaskSource source, std::size_t patch);

using WarnFn = std::function<void(const std::string&)>;

/// Cached bundle when the entry matches the sample's guidance mask. In
/// strict mode a missing or stale entry throws edgss::CacheError; otherwise
/// the bundle is regenerated and `warn` is called.
edgss::ScanBundle resolve_bundle(const edgss::ScanCache* cache, const Sample& sample, MaskSource source,
                                 std::size_t patch, bool strict, const WarnFn& warn);

// --------------------------------------------------------------- trainer

struct TrainConfig {
  std::size_t steps = 200;
  std::size_t batch = 4;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double poly_power = 0.9;
  std::uint64_t seed = 0;
};

/// Scalar keys for --set overrides, prefixed "train." on the command line.
const std::vector<std::string>& train_keys();
void set_train_value(TrainConfig& config, const std::string& key, const std::string& value);

/// lr (1 - step / total)^power.
double poly_lr(double base, std::size_t step, std::size_t total, double power);

/// Decoupled weight decay Adam over a fixed parameter list.
class AdamW {
 public:
  AdamW(std::vector<ad::Var*> params, const TrainConfig& config);
  void step(double lr);
  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<ad::Var*> params_;
  std::vector<Tensor> m_, v_;
  TrainConfig config_;
  std::size_t t_ = 0;
};

struct LossRecord {
  std::size_t step;
  double total;
  double dice;
  double bce;
};

struct TrainResult {
  std::vector<LossRecord> curve;
  bool aborted = false;
  std::string message;
};

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs config.steps optimizer steps over shuffled mini-batches. On a
/// non-finite loss the parameters of the last finite step are restored,
/// written to `abort_checkpoint` when given, and TrainingAborted is thrown.
TrainResult train(model::LidarModel& model, const Dataset& data, const std::vector<edgss::ScanBundle>& bundles,
                  const TrainConfig& config, const std::filesystem::path& abort_checkpoint = {});

std::string curve_csv(const std::vector<LossRecord>& curve);

/// Model inputs for samples[indices] stacked along the batch axis.
std::vector<ad::Var> stack_inputs(const Dataset& data, const std::vector<std::size_t>& indices);
Tensor stack_targets(const Dataset& data, const std::vector<std::size_t>& indices);

/// Per-sample probability maps [1, 1, H, W] in eval mode.
std::vector<Tensor> predict(model::LidarModel& model, const Dataset& data,
                            const std::vector<edgss::ScanBundle>& bundles, std::size_t batch = 8);

// ------------------------------------------------------------ benchmarks

struct BenchRow {
  std::string strategy;
  double median_seconds = 0.0;
  bool permutation_ok = false;
};

/// Times sequence generation for every baseline and for EDG-SS on a random
/// mask covering a grid x grid patch layout, plus retrieval of the EDG-SS
/// bundle from an in-memory cache. Each row is the median of `iterations`
/// monotonic-clock samples.
std::vector<BenchRow> bench_scan(std::size_t grid, std::size_t patch, std::size_t iterations, std::uint64_t seed);
std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace lidar::pipeline
