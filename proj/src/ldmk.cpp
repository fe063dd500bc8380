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

#include "lidar/ldmk.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lidar::ldmk {

using numerics::ConvMode;

ad::Var ChannelScorer::score(const ad::Var& features) const {
  require_4d(features.value(), "score_channels");
  if (features.dim(1) != w1.dim(1)) {
    throw ShapeError("score_channels: features " + to_string(features.shape()) + " do not match scorer " +
                     to_string(w1.shape()));
  }
  const std::size_t B = features.dim(0), C = features.dim(1);
  const ad::Var pooled = ad::reshape(ad::global_avg_pool(features), {B, C});
  return ad::sigmoid(ad::linear(ad::relu(ad::linear(pooled, w1)), w2));
}

std::vector<double> select_topk_mask(std::span<const double> scores, std::size_t k) {
  if (k < 1 || k > scores.size()) {
    throw std::out_of_range("select_topk_mask: k = " + std::to_string(k) + " outside [1, " +
                            std::to_string(scores.size()) + "]");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<double> mask(scores.size(), 0.0);
  for (std::size_t i = 0; i < k; ++i) mask[order[i]] = 1.0;
  return mask;
}

std::size_t ema_update(EmaState& state, std::span<const double> scores, std::size_t channels) {
  if (scores.empty()) throw std::invalid_argument("ema_update: no scores");
  const double rho = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
  state.rho_hat = state.gamma * state.rho_hat + (1.0 - state.gamma) * rho;
  ++state.steps;
  const double raw = std::floor(static_cast<double>(channels) * state.rho_hat);
  state.active = static_cast<std::size_t>(std::clamp(raw, 1.0, static_cast<double>(channels)));
  return state.active;
}

ad::Var reparam_kernel(const KernelBank& bank, std::size_t kernel_size) {
  const auto it = std::find(kBranchSizes.begin(), kBranchSizes.end(), kernel_size);
  if (it == kBranchSizes.end()) {
    throw std::invalid_argument("reparam_kernel: no branch of size " + std::to_string(kernel_size));
  }
  const auto i = static_cast<std::size_t>(it - kBranchSizes.begin());
  return ad::add(ad::mul(bank.kernels[i], ad::add_scalar(bank.alpha[i], 1.0)), bank.beta[i]);
}

LdmkLayer::LdmkLayer(const LdmkConfig& config, Rng& rng) : config_(config) {
  const std::size_t cin = config.in_channels, cout = config.out_channels;
  const std::size_t cm = config.mid(), hidden = config.hidden();
  auto he = [](std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
  entry = ad::parameter(Tensor::normal({cm, cin, 1, 1}, he(cin), rng));
  scorer.w1 = ad::parameter(Tensor::normal({hidden, cm}, he(cm), rng));
  scorer.w2 = ad::parameter(Tensor::normal({cm, hidden}, he(hidden), rng));
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t k = kBranchSizes[i];
    bank.kernels[i] = ad::parameter(Tensor::normal({cm, 1, k, k}, 1.0 / static_cast<double>(k), rng));
    bank.alpha[i] = ad::parameter(Tensor({1}, 0.0));
    bank.beta[i] = ad::parameter(Tensor({1}, 0.0));
  }
  exit = ad::parameter(Tensor::normal({cout, 3 * cm, 1, 1}, 0.5 * he(3 * cm), rng));
  if (cin != cout) residual = ad::parameter(Tensor::normal({cout, cin, 1, 1}, he(cin), rng));
  ema.gamma = config.ema_gamma;
}

std::size_t LdmkLayer::active_channels() const { return ema.active ? ema.active : config_.mid(); }

ad::Var LdmkLayer::forward(const ad::Var& x, bool training, MaskMode mode) {
  const ad::Var mid = ad::conv2d(x, entry, ConvMode::kPointwise);
  const std::size_t B = mid.dim(0), cm = mid.dim(1);
  const ad::Var scores = scorer.score(mid);

  std::vector<double> batch_scores(cm, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < cm; ++c) batch_scores[c] += scores.value()[b * cm + c] / static_cast<double>(B);
  }
  const std::size_t k = training ? ema_update(ema, batch_scores, cm) : active_channels();

  ad::Var mask;
  if (mode == MaskMode::kSoft) {
    mask = ad::reshape(scores, {B, cm, 1, 1});
  } else {
    mask = ad::constant(Tensor({1, cm, 1, 1}, select_topk_mask(batch_scores, k)));
  }
  const ad::Var pruned = ad::mul(mid, mask);

  std::vector<ad::Var> branches;
  for (std::size_t ks : kBranchSizes) {
    branches.push_back(ad::conv2d(pruned, reparam_kernel(bank, ks), ConvMode::kDepthwise));
  }
  const ad::Var fused = ad::conv2d(ad::concat_channels(branches), exit, ConvMode::kPointwise);
  const ad::Var skip = residual ? ad::conv2d(x, *residual, ConvMode::kPointwise) : x;
  return ad::add(fused, skip);
}

void LdmkLayer::collect(const std::string& prefix, StateRegistry& registry) {
  registry.add(join_path(prefix, "entry"), entry);
  registry.add(join_path(prefix, "scorer.w1"), scorer.w1);
  registry.add(join_path(prefix, "scorer.w2"), scorer.w2);
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string k = std::to_string(kBranchSizes[i]);
    registry.add(join_path(prefix, "bank.w" + k), bank.kernels[i]);
    registry.add(join_path(prefix, "bank.alpha" + k), bank.alpha[i]);
    registry.add(join_path(prefix, "bank.beta" + k), bank.beta[i]);
  }
  registry.add(join_path(prefix, "exit"), exit);
  if (residual) registry.add(join_path(prefix, "residual"), *residual);
  registry.emas.emplace_back(join_path(prefix, "ema"), &ema);
}

std::size_t LdmkLayer::parameter_count() const {
  std::size_t n = entry.value().size() + scorer.w1.value().size() + scorer.w2.value().size() + exit.value().size();
  for (std::size_t i = 0; i < 3; ++i) {
    n += bank.kernels[i].value().size() + bank.alpha[i].value().size() + bank.beta[i].value().size();
  }
  if (residual) n += residual->value().size();
  return n;
}

std::size_t analytic_parameter_count(const LdmkConfig& c) {
  const std::size_t cm = c.mid(), hidden = c.hidden();
  std::size_t bank = 0;
  for (std::size_t k : kBranchSizes) bank += k * k;
  std::size_t n = c.in_channels * cm + 2 * cm * hidden + cm * bank + 6 + 3 * cm * c.out_channels;
  if (c.in_channels != c.out_channels) n += c.in_channels * c.out_channels;
  return n;
}

std::size_t plain_conv_parameter_count(std::size_t in_channels, std::size_t out_channels, std::size_t kernel) {
  return in_channels * out_channels * kernel * kernel;
}

}  // namespace lidar::ldmk
