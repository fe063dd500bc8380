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

#include "lidar/ld3cf.hpp"

#include <algorithm>
#include <cmath>

namespace lidar::ld3cf {

using numerics::ConvMode;
using numerics::PoolExtent;
using numerics::PoolKind;

namespace {

ad::Var channel_descriptor(const ad::Var& x) {
  return ad::reshape(ad::global_avg_pool(x), {x.dim(0), x.dim(1)});
}

// [B, C] -> [B, C, 1, 1]
ad::Var as_channel_map(const ad::Var& v) { return ad::reshape(v, {v.dim(0), v.dim(1), 1, 1}); }

ad::Var one_minus(const ad::Var& v) { return ad::add_scalar(ad::scale(v, -1.0), 1.0); }

double he(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

}  // namespace

SpectralDistance spectral_distance(std::size_t H, std::size_t W) {
  if (!numerics::is_power_of_two(H) || !numerics::is_power_of_two(W) || H < 2 || W < 2) {
    throw ShapeError("spectral_distance: " + std::to_string(H) + "x" + std::to_string(W) +
                     " is not a power-of-two map of at least 2x2");
  }
  const std::size_t Wf = W / 2 + 1;
  SpectralDistance d{Tensor({1, 1, H, Wf}), Tensor({1, 1, H, Wf})};
  for (std::size_t u = 0; u < H; ++u) {
    for (std::size_t v = 0; v < Wf; ++v) {
      d.vertical[u * Wf + v] = static_cast<double>(std::min(u, H - u)) / (H / 2.0);
      d.horizontal[u * Wf + v] = static_cast<double>(v) / (W / 2.0);
    }
  }
  return d;
}

SoftMasks soft_masks(const SpectralDistance& dist, const ad::Var& radius, const ad::Var& tau) {
  auto high = [&](const Tensor& d) { return ad::sigmoid(ad::mul(tau, ad::sub(ad::constant(d), radius))); };
  SoftMasks m;
  m.high_h = high(dist.horizontal);
  m.high_v = high(dist.vertical);
  m.low = one_minus(ad::maximum(m.high_h, m.high_v));
  return m;
}

BandSplit band_split(const Tensor& x, double radius, double tau) {
  require_4d(x, "band_split");
  const auto dist = spectral_distance(x.dim(2), x.dim(3));
  const SoftMasks m = soft_masks(dist, ad::constant(Tensor({1}, radius)), ad::constant(Tensor({1}, tau)));
  const ad::Var spectrum = ad::rfft2(ad::constant(x));
  const ad::Var high_mask = ad::maximum(m.high_h, m.high_v);
  return {ad::irfft2(ad::mul(spectrum, m.low), x.dim(3)).value(),
          ad::irfft2(ad::mul(spectrum, high_mask), x.dim(3)).value()};
}

AfdpLayer::AfdpLayer(std::size_t C, const ldmk::LdmkConfig& band_config, Rng& rng) {
  if (band_config.in_channels != C || band_config.out_channels != C) {
    throw ShapeError("AfdpLayer: band refinement must map " + std::to_string(C) + " -> " + std::to_string(C) +
                     " channels");
  }
  const std::size_t C2 = 2 * C;
  auto directional = [&](Shape shape) {
    Tensor k = Tensor::normal(std::move(shape), 0.1, rng);
    for (std::size_t c = 0; c < C2; ++c) k[c * 3 + 1] += 1.0;  // centre tap
    return ad::parameter(std::move(k));
  };
  conv_h = directional({C2, 1, 1, 3});
  conv_v = directional({C2, 1, 3, 1});
  bn_h_gamma = ad::parameter(Tensor({C2}, 1.0));
  bn_h_beta = ad::parameter(Tensor({C2}, 0.0));
  bn_v_gamma = ad::parameter(Tensor({C2}, 1.0));
  bn_v_beta = ad::parameter(Tensor({C2}, 0.0));
  radius_param = ad::parameter(Tensor({1}, 0.25));
  log_tau = ad::parameter(Tensor({1}, std::log(10.0)));
  for (auto& layer : refine) layer = ldmk::LdmkLayer(band_config, rng);
  gate_h_weight = ad::parameter(Tensor::normal({C, C, 1, 1}, 0.5 * he(C), rng));
  gate_h_bias = ad::parameter(Tensor({C}, 0.0));
  gate_v_weight = ad::parameter(Tensor::normal({C, C, 1, 1}, 0.5 * he(C), rng));
  gate_v_bias = ad::parameter(Tensor({C}, 0.0));
  attention_weight = ad::parameter(Tensor::normal({C, 3 * C}, 0.5 * he(3 * C), rng));
  attention_bias = ad::parameter(Tensor({C}, 0.0));
  low_scale = ad::parameter(Tensor({1}, 0.1));
}

double AfdpLayer::tau() const { return std::exp(log_tau.value()[0]); }

AfdpParts AfdpLayer::forward_parts(const ad::Var& x, bool training) {
  require_4d(x.value(), "afdp_forward");
  const std::size_t H = x.dim(2), W = x.dim(3);
  const auto dist = spectral_distance(H, W);
  const ad::Var spectrum = ad::rfft2(x);

  const ad::Var freq_h = ad::relu(
      ad::batch_norm(ad::conv2d(spectrum, conv_h, ConvMode::kDepthwise), bn_h_gamma, bn_h_beta, bn_h_stats, training));
  const ad::Var freq_v = ad::relu(
      ad::batch_norm(ad::conv2d(spectrum, conv_v, ConvMode::kDepthwise), bn_v_gamma, bn_v_beta, bn_v_stats, training));

  const SoftMasks m = soft_masks(dist, radius_param, ad::exp(log_tau));
  const ad::Var high_h = refine[0].forward(ad::irfft2(ad::mul(freq_h, m.high_h), W), training);
  const ad::Var high_v = refine[1].forward(ad::irfft2(ad::mul(freq_v, m.high_v), W), training);
  const ad::Var low = refine[2].forward(ad::irfft2(ad::mul(spectrum, m.low), W), training);

  const ad::Var g_h = ad::sigmoid(ad::conv2d(high_h, gate_h_weight, ConvMode::kPointwise, gate_h_bias));
  const ad::Var g_v = ad::sigmoid(ad::conv2d(high_v, gate_v_weight, ConvMode::kPointwise, gate_v_bias));
  const ad::Var descriptors = ad::concat_channels({as_channel_map(channel_descriptor(high_h)),
                                                   as_channel_map(channel_descriptor(high_v)),
                                                   as_channel_map(channel_descriptor(low))});
  const ad::Var attention = as_channel_map(ad::sigmoid(
      ad::linear(ad::reshape(descriptors, {x.dim(0), descriptors.dim(1)}), attention_weight, attention_bias)));

  return {ad::mul(x, attention), ad::add(ad::mul(g_h, high_h), ad::mul(g_v, high_v)), ad::mul(low, low_scale)};
}

ad::Var AfdpLayer::forward(const ad::Var& x, bool training) {
  const AfdpParts p = forward_parts(x, training);
  return ad::add(ad::add(p.residual, p.high), p.low);
}

void AfdpLayer::collect(const std::string& prefix, StateRegistry& registry) {
  registry.add(join_path(prefix, "conv_h"), conv_h);
  registry.add(join_path(prefix, "conv_v"), conv_v);
  registry.add(join_path(prefix, "bn_h.gamma"), bn_h_gamma);
  registry.add(join_path(prefix, "bn_h.beta"), bn_h_beta);
  registry.add(join_path(prefix, "bn_v.gamma"), bn_v_gamma);
  registry.add(join_path(prefix, "bn_v.beta"), bn_v_beta);
  registry.add(join_path(prefix, "radius"), radius_param);
  registry.add(join_path(prefix, "log_tau"), log_tau);
  const char* names[3] = {"refine_high_h", "refine_high_v", "refine_low"};
  for (std::size_t i = 0; i < 3; ++i) refine[i].collect(join_path(prefix, names[i]), registry);
  registry.add(join_path(prefix, "gate_h.weight"), gate_h_weight);
  registry.add(join_path(prefix, "gate_h.bias"), gate_h_bias);
  registry.add(join_path(prefix, "gate_v.weight"), gate_v_weight);
  registry.add(join_path(prefix, "gate_v.bias"), gate_v_bias);
  registry.add(join_path(prefix, "attention.weight"), attention_weight);
  registry.add(join_path(prefix, "attention.bias"), attention_bias);
  registry.add(join_path(prefix, "low_scale"), low_scale);
  registry.norms.emplace_back(join_path(prefix, "bn_h"), &bn_h_stats);
  registry.norms.emplace_back(join_path(prefix, "bn_v"), &bn_v_stats);
}

DualPoolFusion::DualPoolFusion(std::size_t C, std::size_t aux, const ldmk::LdmkConfig& config, Rng& rng) {
  rgb_weight = ad::parameter(Tensor::normal({C, C}, 0.5 * he(C), rng));
  rgb_bias = ad::parameter(Tensor({C}, 0.0));
  w_avg = ad::parameter(Tensor({1}, 0.5));
  w_max = ad::parameter(Tensor({1}, 0.5));
  for (std::size_t l = 0; l < aux; ++l) transforms.emplace_back(config, rng);
}

ad::Var DualPoolFusion::rgb_enhance(const ad::Var& rgb) const {
  require_4d(rgb.value(), "rgb_enhance");
  return ad::mul(rgb, as_channel_map(ad::sigmoid(ad::linear(channel_descriptor(rgb), rgb_weight, rgb_bias))));
}

ad::Var DualPoolFusion::dual_pool(const ad::Var& rgb_enhanced, const ad::Var& aux) const {
  if (rgb_enhanced.shape() != aux.shape()) {
    throw ShapeError("fuse_modality: RGB features " + to_string(rgb_enhanced.shape()) + " vs auxiliary " +
                     to_string(aux.shape()));
  }
  const ad::Var s = ad::add(rgb_enhanced, aux);
  return ad::add(ad::mul(ad::pool2d(s, PoolKind::kAvg, PoolExtent::Local(3)), w_avg),
                 ad::mul(ad::pool2d(s, PoolKind::kMax, PoolExtent::Local(3)), w_max));
}

ad::Var DualPoolFusion::fuse_modality(const ad::Var& rgb_enhanced, const ad::Var& aux, std::size_t l, bool training) {
  if (l >= transforms.size()) {
    throw std::out_of_range("fuse_modality: auxiliary index " + std::to_string(l) + " but only " +
                            std::to_string(transforms.size()) + " transforms");
  }
  return transforms[l].forward(dual_pool(rgb_enhanced, aux), training);
}

void DualPoolFusion::collect(const std::string& prefix, StateRegistry& registry) {
  registry.add(join_path(prefix, "rgb.weight"), rgb_weight);
  registry.add(join_path(prefix, "rgb.bias"), rgb_bias);
  registry.add(join_path(prefix, "w_avg"), w_avg);
  registry.add(join_path(prefix, "w_max"), w_max);
  for (std::size_t l = 0; l < transforms.size(); ++l) {
    transforms[l].collect(join_path(prefix, "transform" + std::to_string(l + 1)), registry);
  }
}

ad::Var sum_modalities(const ad::Var& rgb_enhanced, const std::vector<ad::Var>& fused) {
  if (fused.empty()) return rgb_enhanced;
  for (const auto& f : fused) {
    if (f.shape() != rgb_enhanced.shape()) {
      throw ShapeError("sum_modalities: fused map " + to_string(f.shape()) + " vs RGB " +
                       to_string(rgb_enhanced.shape()));
    }
  }
  const std::size_t n = rgb_enhanced.value().size();
  Tensor out(rgb_enhanced.shape());
  std::vector<double> terms(fused.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t l = 0; l < fused.size(); ++l) terms[l] = fused[l].value()[i];
    std::sort(terms.begin(), terms.end());
    double acc = 0.0;
    for (double t : terms) acc += t;
    out[i] = rgb_enhanced.value()[i] + acc;
  }
  std::vector<ad::Var> inputs{rgb_enhanced};
  inputs.insert(inputs.end(), fused.begin(), fused.end());
  return ad::record(std::move(out), "sum_modalities", inputs, [](ad::Node& node) {
    for (auto& in : node.inputs) in->accumulate(node.grad);
  });
}

CrossScaleGate::CrossScaleGate(std::size_t C, std::size_t levels, Rng& rng) {
  for (std::size_t n = 1; n < levels; ++n) {
    weights.push_back(ad::parameter(Tensor::normal({C, C}, 0.5 * he(C), rng)));
    biases.push_back(ad::parameter(Tensor({C}, 0.0)));
  }
}

ad::Var CrossScaleGate::forward(const ad::Var& current, const std::optional<ad::Var>& previous, std::size_t level) const {
  if (level == 0) return current;
  if (level > weights.size()) {
    throw std::out_of_range("cross_scale_gate: level " + std::to_string(level) + " beyond " +
                            std::to_string(weights.size()));
  }
  if (!previous) throw std::invalid_argument("cross_scale_gate: level " + std::to_string(level) + " needs the previous level");
  if (previous->shape() != current.shape()) {
    throw ShapeError("cross_scale_gate: current " + to_string(current.shape()) + " vs previous " +
                     to_string(previous->shape()));
  }
  const ad::Var gate =
      as_channel_map(ad::sigmoid(ad::linear(channel_descriptor(*previous), weights[level - 1], biases[level - 1])));
  return ad::add(ad::mul(current, gate), ad::mul(*previous, one_minus(gate)));
}

void CrossScaleGate::collect(const std::string& prefix, StateRegistry& registry) {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const std::string base = join_path(prefix, "level" + std::to_string(i + 1));
    registry.add(base + ".weight", weights[i]);
    registry.add(base + ".bias", biases[i]);
  }
}

SegHead::SegHead(std::size_t C, std::size_t levels, Rng& rng) {
  if (levels == 0) throw std::invalid_argument("SegHead: needs at least one level");
  level_weights = ad::parameter(Tensor({levels}, 1.0 / static_cast<double>(levels)));
  linear_weight = ad::parameter(Tensor::normal({C, C, 1, 1}, he(C), rng));
  linear_bias = ad::parameter(Tensor({C}, 0.0));
  out_weight = ad::parameter(Tensor::normal({1, C, 1, 1}, 0.1 * he(C), rng));
  out_bias = ad::parameter(Tensor({1}, 0.0));
}

ad::Var SegHead::logits(const std::vector<ad::Var>& levels, std::size_t out_h, std::size_t out_w) const {
  if (levels.size() != level_weights.dim(0)) {
    throw ShapeError("seg_head: " + std::to_string(levels.size()) + " levels for a head built with " +
                     std::to_string(level_weights.dim(0)));
  }
  std::size_t h = 0, w = 0;
  for (const auto& l : levels) {
    require_4d(l.value(), "seg_head");
    if (l.dim(1) != levels[0].dim(1) || l.dim(0) != levels[0].dim(0)) {
      throw ShapeError("seg_head: level " + to_string(l.shape()) + " vs " + to_string(levels[0].shape()));
    }
    h = std::max(h, l.dim(2));
    w = std::max(w, l.dim(3));
  }
  const ad::Var lw = ad::reshape(level_weights, {1, levels.size(), 1, 1});
  ad::Var agg;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    ad::Var l = levels[i];
    if (l.dim(2) != h || l.dim(3) != w) l = ad::upsample_bilinear(l, h, w);
    const ad::Var term = ad::mul(l, ad::slice_channels(lw, i, 1));
    agg = i ? ad::add(agg, term) : term;
  }
  const ad::Var mixed = ad::conv2d(agg, linear_weight, ConvMode::kPointwise, linear_bias);
  ad::Var logit = ad::conv2d(mixed, out_weight, ConvMode::kPointwise, out_bias);
  if (logit.dim(2) != out_h || logit.dim(3) != out_w) logit = ad::upsample_bilinear(logit, out_h, out_w);
  return logit;
}

ad::Var SegHead::forward(const std::vector<ad::Var>& levels, std::size_t out_h, std::size_t out_w) const {
  return ad::sigmoid(logits(levels, out_h, out_w));
}

void SegHead::collect(const std::string& prefix, StateRegistry& registry) {
  registry.add(join_path(prefix, "level_weights"), level_weights);
  registry.add(join_path(prefix, "linear.weight"), linear_weight);
  registry.add(join_path(prefix, "linear.bias"), linear_bias);
  registry.add(join_path(prefix, "out.weight"), out_weight);
  registry.add(join_path(prefix, "out.bias"), out_bias);
}

}  // namespace lidar::ld3cf
