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

#include "lidar/lacavss.hpp"

#include <cmath>

namespace lidar::lacavss {

using numerics::PoolExtent;
using numerics::PoolKind;

namespace {

constexpr std::array<const char*, 4> kDirNames{"h_tb", "h_bt", "v_tb", "v_bt"};

}  // namespace

DpddLayer::DpddLayer(std::size_t channels, std::size_t g, const ldmk::LdmkConfig& inner, Rng& rng)
    : ldmk(inner, rng),
      gn_gamma(ad::parameter(Tensor({channels}, 1.0))),
      gn_beta(ad::parameter(Tensor({channels}, 0.0))),
      groups(g) {
  if (inner.in_channels != channels || inner.out_channels != channels) {
    throw ShapeError("DpddLayer: inner LDMK maps " + std::to_string(inner.in_channels) + " -> " +
                     std::to_string(inner.out_channels) + " channels, expected " + std::to_string(channels));
  }
}

ad::Var dual_pool(const ad::Var& x) {
  return ad::add(ad::pool2d(x, PoolKind::kAvg, PoolExtent::Local(3)), ad::pool2d(x, PoolKind::kMax, PoolExtent::Local(3)));
}

ad::Var DpddLayer::forward(const ad::Var& x, bool training) {
  const ad::Var inner = ldmk.forward(dual_pool(x), training);
  return ad::add(ad::relu(ad::group_norm(inner, groups, gn_gamma, gn_beta)), x);
}

void DpddLayer::collect(const std::string& prefix, StateRegistry& registry) {
  ldmk.collect(join_path(prefix, "ldmk"), registry);
  registry.add(join_path(prefix, "gn.gamma"), gn_gamma);
  registry.add(join_path(prefix, "gn.beta"), gn_beta);
}

double zoh_phi_closed(double a) { return std::expm1(a) / a; }

double zoh_phi_series(double a) { return 1.0 + a * (0.5 + a * (1.0 / 6.0 + a / 24.0)); }

double zoh_phi(double a) { return std::abs(a) < kSeriesSwitch ? zoh_phi_series(a) : zoh_phi_closed(a); }

double zoh_phi_grad(double a) {
  if (std::abs(a) < kSeriesSwitch) return 0.5 + a * (1.0 / 3.0 + a * (1.0 / 8.0 + a / 30.0));
  return (a * std::exp(a) - std::expm1(a)) / (a * a);
}

ad::Var selective_scan(const ad::Var& tokens, const SsmParams& p) {
  const Shape& s = tokens.shape();
  if (s.size() != 3 || s[1] == 0) throw ShapeError("selective_scan: expected non-empty [B, L, D], got " + to_string(s));
  const std::size_t B = s[0], L = s[1], D = s[2];
  if (p.a.value().rank() != 2 || p.a.dim(0) != D || p.b.shape() != p.a.shape() || p.c.shape() != p.a.shape() ||
      p.d_skip.shape() != Shape{D}) {
    throw ShapeError("selective_scan: parameters a " + to_string(p.a.shape()) + ", b " + to_string(p.b.shape()) +
                     ", c " + to_string(p.c.shape()) + ", d " + to_string(p.d_skip.shape()) + " do not fit tokens " +
                     to_string(s));
  }
  for (const ad::Var* v : {&p.a, &p.b, &p.c, &p.d_skip}) {
    if (!v->value().all_finite()) throw NumericError("selective_scan: non-finite state-space parameter");
  }
  const std::size_t N = p.a.dim(1);
  const Tensor& x = tokens.value();
  const Tensor &a = p.a.value(), &b = p.b.value(), &c = p.c.value(), &dk = p.d_skip.value();

  std::vector<double> a_bar(D * N), b_bar(D * N);
  for (std::size_t i = 0; i < D * N; ++i) {
    a_bar[i] = std::exp(a[i]);
    b_bar[i] = zoh_phi(a[i]) * b[i];
  }

  // hs[((b * L + k) * D + d) * N + n] = h_k for every step, kept for backward.
  auto hs = std::make_shared<std::vector<double>>(B * L * D * N, 0.0);
  Tensor y({B, L, D});
  for (std::size_t bi = 0; bi < B; ++bi) {
    for (std::size_t k = 0; k < L; ++k) {
      for (std::size_t d = 0; d < D; ++d) {
        const double xk = x[(bi * L + k) * D + d];
        double* h = &(*hs)[((bi * L + k) * D + d) * N];
        const double* h_prev = k ? &(*hs)[((bi * L + k - 1) * D + d) * N] : nullptr;
        double acc = dk[d] * xk;
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t i = d * N + n;
          h[n] = (h_prev ? a_bar[i] * h_prev[n] : 0.0) + b_bar[i] * xk;
          acc += c[i] * h[n];
        }
        y[(bi * L + k) * D + d] = acc;
      }
    }
  }

  return ad::record(
      std::move(y), "selective_scan", {tokens, p.a, p.b, p.c, p.d_skip},
      [hs, a_bar, b_bar, B, L, D, N](ad::Node& node) {
        ad::Node& xn = *node.inputs[0];
        const Tensor& x = xn.value;
        const Tensor& a = node.inputs[1]->value;
        const Tensor& b = node.inputs[2]->value;
        const Tensor& c = node.inputs[3]->value;
        const Tensor& dk = node.inputs[4]->value;
        Tensor gx(x.shape()), gc(c.shape()), gd(dk.shape());
        std::vector<double> g_abar(D * N, 0.0), g_bbar(D * N, 0.0), gh(N);
        for (std::size_t bi = 0; bi < B; ++bi) {
          for (std::size_t d = 0; d < D; ++d) {
            std::fill(gh.begin(), gh.end(), 0.0);
            for (std::size_t k = L; k-- > 0;) {
              const std::size_t t = (bi * L + k) * D + d;
              const double gy = node.grad[t], xk = x[t];
              const double* h = &(*hs)[t * N];
              const double* h_prev = k ? &(*hs)[((bi * L + k - 1) * D + d) * N] : nullptr;
              double gxk = dk[d] * gy;
              gd[d] += gy * xk;
              for (std::size_t n = 0; n < N; ++n) {
                const std::size_t i = d * N + n;
                gh[n] = c[i] * gy + gh[n];
                gc[i] += gy * h[n];
                gxk += gh[n] * b_bar[i];
                g_bbar[i] += gh[n] * xk;
                if (h_prev) g_abar[i] += gh[n] * h_prev[n];
                gh[n] *= a_bar[i];  // carried to step k - 1
              }
              gx[t] = gxk;
            }
          }
        }
        Tensor ga(a.shape()), gb(b.shape());
        for (std::size_t i = 0; i < D * N; ++i) {
          ga[i] = g_abar[i] * a_bar[i] + g_bbar[i] * b[i] * zoh_phi_grad(a[i]);
          gb[i] = g_bbar[i] * zoh_phi(a[i]);
        }
        xn.accumulate(gx);
        node.inputs[1]->accumulate(ga);
        node.inputs[2]->accumulate(gb);
        node.inputs[3]->accumulate(gc);
        node.inputs[4]->accumulate(gd);
      });
}

std::vector<std::size_t> expand_order(std::span<const std::size_t> patch_order, std::size_t area) {
  std::vector<std::size_t> out;
  out.reserve(patch_order.size() * area);
  for (std::size_t p : patch_order) {
    for (std::size_t j = 0; j < area; ++j) out.push_back(p * area + j);
  }
  return out;
}

ad::Var embed_sequence(const ad::Var& tokens, const TokenOrders& orders, const ad::Var& direction,
                       const ad::Var& position) {
  const Shape& s = tokens.shape();
  if (s.size() != 3) throw ShapeError("embed_sequence: expected [B, L, D] tokens, got " + to_string(s));
  if (position.shape() != Shape{s[1], s[2]} || direction.shape() != Shape{s[2]}) {
    throw ShapeError("embed_sequence: tokens " + to_string(s) + " vs direction " + to_string(direction.shape()) +
                     " and position " + to_string(position.shape()));
  }
  for (const auto& o : orders) {
    if (!edgss::is_permutation(o, s[1])) {
      throw ShapeError("embed_sequence: order of length " + std::to_string(o.size()) +
                       " is not a permutation of the " + std::to_string(s[1]) + " tokens");
    }
  }
  return ad::add(ad::add(ad::gather_tokens(tokens, orders), direction), position);
}

ad::Var merge_directions(const std::array<ad::Var, 4>& outputs, const std::array<TokenOrders, 4>& orders,
                         const ad::Var& weight, const ad::Var& bias) {
  ad::Var total;
  for (std::size_t i = 0; i < 4; ++i) {
    if (i && outputs[i].shape() != outputs[0].shape()) {
      throw ShapeError("merge_directions: output " + to_string(outputs[i].shape()) + " does not match " +
                       to_string(outputs[0].shape()));
    }
    TokenOrders inverse;
    for (const auto& o : orders[i]) {
      if (o.size() != outputs[i].dim(1)) {
        throw ShapeError("merge_directions: order of length " + std::to_string(o.size()) + " for output " +
                         to_string(outputs[i].shape()));
      }
      inverse.push_back(edgss::invert_permutation(o));
    }
    const ad::Var canonical = ad::gather_tokens(outputs[i], inverse);
    total = i ? ad::add(total, canonical) : canonical;
  }
  return ad::linear(total, weight, bias);
}

std::size_t cell_size(std::size_t height, std::size_t width, std::size_t patches) {
  const std::size_t pixels = height * width;
  if (patches == 0 || pixels % patches != 0) {
    throw ShapeError("scan bundle of " + std::to_string(patches) + " patches does not tile a " +
                     std::to_string(height) + "x" + std::to_string(width) + " map");
  }
  const std::size_t area = pixels / patches;
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(area))));
  if (side * side != area || height % side != 0 || width % side != 0) {
    throw ShapeError("scan bundle of " + std::to_string(patches) + " patches does not tile a " +
                     std::to_string(height) + "x" + std::to_string(width) + " map with square cells");
  }
  return side;
}

LacaVssBlock::LacaVssBlock(const LacaVssConfig& cfg, Rng& rng) : config_(cfg) {
  const std::size_t C = cfg.channels, N = cfg.state_dim;
  ldmk::LdmkConfig inner;
  inner.in_channels = inner.out_channels = C;
  inner.reduction = cfg.reduction;
  inner.ema_gamma = cfg.ema_gamma;
  for (auto& layer : dpdd) layer = DpddLayer(C, cfg.groups, inner, rng);

  for (auto& dir : embedding.direction) dir = ad::parameter(Tensor::normal({C}, 0.02, rng));
  embedding.position = ad::parameter(Tensor::normal({cfg.tokens, C}, 0.02, rng));

  const double c_std = 1.0 / std::sqrt(static_cast<double>(N));
  for (auto& p : ssm) {
    p.a = ad::parameter(Tensor::uniform({C, N}, -1.0, -0.25, rng));
    p.b = ad::parameter(Tensor::normal({C, N}, 0.5, rng));
    p.c = ad::parameter(Tensor::normal({C, N}, 0.5 * c_std, rng));
    p.d_skip = ad::parameter(Tensor({C}, 1.0));
  }
  const double w_std = 0.5 / std::sqrt(static_cast<double>(C));
  // Small merge projection so each stage starts close to its DPDD output.
  merge_weight = ad::parameter(Tensor::normal({C, C}, 0.2 * w_std, rng));
  merge_bias = ad::parameter(Tensor({C}, 0.0));
  gate_weight = ad::parameter(Tensor::normal({C, C}, w_std, rng));
  gate_bias = ad::parameter(Tensor({C}, 0.0));
}

ad::Var LacaVssBlock::forward(const ad::Var& x, const std::vector<const edgss::ScanBundle*>& bundles, bool training) {
  require_4d(x.value(), "LacaVssBlock");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (C != config_.channels || H * W != config_.tokens) {
    throw ShapeError("LacaVssBlock: input " + to_string(x.shape()) + " does not match a block built for " +
                     std::to_string(config_.channels) + " channels and " + std::to_string(config_.tokens) +
                     " tokens");
  }
  if (bundles.empty() || (bundles.size() != 1 && bundles.size() != B)) {
    throw ShapeError("LacaVssBlock: " + std::to_string(bundles.size()) + " scan bundles for a batch of " +
                     std::to_string(B));
  }
  const std::size_t patches = bundles[0]->length();
  for (const auto* bundle : bundles) {
    if (!bundle || bundle->length() != patches) throw ShapeError("LacaVssBlock: scan bundles of unequal length");
  }
  const std::size_t cell = cell_size(H, W, patches);

  ad::Var feat = x;
  for (auto& layer : dpdd) feat = layer.forward(feat, training);

  const ad::Var tokens = ad::to_tokens(feat, cell, cell);
  std::array<TokenOrders, 4> orders;
  std::array<ad::Var, 4> outputs;
  for (std::size_t i = 0; i < 4; ++i) {
    for (const auto* bundle : bundles) orders[i].push_back(expand_order(bundle->sequences[i].indices, cell * cell));
    const ad::Var seq = embed_sequence(tokens, orders[i], embedding.direction[i], embedding.position);
    outputs[i] = selective_scan(seq, ssm[i]);
  }
  const ad::Var merged = merge_directions(outputs, orders, merge_weight, merge_bias);
  const ad::Var gated = ad::mul(merged, ad::sigmoid(ad::linear(merged, gate_weight, gate_bias)));
  return ad::add(feat, ad::from_tokens(gated, H, W, cell, cell));
}

void LacaVssBlock::collect(const std::string& prefix, StateRegistry& registry) {
  for (std::size_t i = 0; i < 2; ++i) dpdd[i].collect(join_path(prefix, "dpdd" + std::to_string(i)), registry);
  for (std::size_t i = 0; i < 4; ++i) {
    registry.add(join_path(prefix, std::string("embed.dir.") + kDirNames[i]), embedding.direction[i]);
  }
  registry.add(join_path(prefix, "embed.pos"), embedding.position);
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string base = join_path(prefix, std::string("ssm.") + kDirNames[i]);
    registry.add(base + ".a", ssm[i].a);
    registry.add(base + ".b", ssm[i].b);
    registry.add(base + ".c", ssm[i].c);
    registry.add(base + ".d", ssm[i].d_skip);
  }
  registry.add(join_path(prefix, "merge.weight"), merge_weight);
  registry.add(join_path(prefix, "merge.bias"), merge_bias);
  registry.add(join_path(prefix, "gate.weight"), gate_weight);
  registry.add(join_path(prefix, "gate.bias"), gate_bias);
}

}  // namespace lidar::lacavss
