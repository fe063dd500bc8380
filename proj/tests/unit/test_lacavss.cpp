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

#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "lidar/lacavss.hpp"
#include "lidar/numerics/grad_check.hpp"

using namespace lidar;
using namespace lidar::lacavss;
using Idx = std::vector<std::size_t>;

namespace {

SsmParams scalar_ssm(double a, double b, double c, double d) {
  return {ad::constant(Tensor({1, 1}, a)), ad::constant(Tensor({1, 1}, b)), ad::constant(Tensor({1, 1}, c)),
          ad::constant(Tensor({1}, d))};
}

SsmParams random_ssm(std::size_t D, std::size_t N, Rng& rng) {
  return {ad::parameter(Tensor::uniform({D, N}, -1.0, -0.1, rng)), ad::parameter(Tensor::normal({D, N}, 1.0, rng)),
          ad::parameter(Tensor::normal({D, N}, 1.0, rng)), ad::parameter(Tensor::normal({D}, 1.0, rng))};
}

ldmk::LdmkConfig inner_config(std::size_t c) {
  ldmk::LdmkConfig cfg;
  cfg.in_channels = cfg.out_channels = c;
  return cfg;
}

void zero_registry(StateRegistry& reg) {
  for (auto& [name, v] : reg.params) v->mutable_value().fill(0.0);
}

// Independent 3x3 avg + max with clipped windows.
Tensor pool_oracle(const Tensor& x) {
  Tensor out(x.shape());
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t i = 0; i < H; ++i) {
        for (std::size_t j = 0; j < W; ++j) {
          double sum = 0.0, mx = -INFINITY;
          int n = 0;
          for (int di = -1; di <= 1; ++di) {
            for (int dj = -1; dj <= 1; ++dj) {
              const int y = static_cast<int>(i) + di, z = static_cast<int>(j) + dj;
              if (y < 0 || z < 0 || y >= static_cast<int>(H) || z >= static_cast<int>(W)) continue;
              const double v = x.at(b, c, y, z);
              sum += v;
              mx = std::max(mx, v);
              ++n;
            }
          }
          out.at(b, c, i, j) = sum / n + mx;
        }
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("dpdd examples") {
  Rng rng(1);
  DpddLayer layer(8, 4, inner_config(8), rng);
  StateRegistry reg;
  layer.collect("", reg);
  zero_registry(reg);
  const Tensor x = Tensor::normal({2, 8, 6, 6}, 1.0, rng);
  CHECK(layer.forward(ad::constant(x), false).value() == x);

  const Tensor c = Tensor::full({1, 3, 4, 4}, 1.5);
  const Tensor pooled = dual_pool(ad::constant(c)).value();
  for (double v : pooled.data()) CHECK(v == 3.0);

  const Tensor r = Tensor::normal({2, 3, 5, 7}, 1.0, rng);
  CHECK(max_abs_diff(dual_pool(ad::constant(r)).value(), pool_oracle(r)) < 1e-12);
}

TEST_CASE("selective_scan examples") {
  const ad::Var ones = ad::constant(Tensor({1, 3, 1}, 1.0));
  const Tensor y0 = selective_scan(ones, scalar_ssm(0.0, 1.0, 1.0, 0.0)).value();
  CHECK(y0 == Tensor({1, 3, 1}, std::vector<double>{1, 2, 3}));

  const double ln2 = std::log(2.0);
  const Tensor y1 = selective_scan(ad::constant(Tensor({1, 2, 1}, std::vector<double>{1, 0})),
                                   scalar_ssm(ln2, ln2, 1.0, 0.0))
                        .value();
  CHECK(y1[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(y1[1] == doctest::Approx(2.0).epsilon(1e-14));

  Rng rng(2);
  const Tensor x = Tensor::normal({2, 7, 3}, 1.0, rng);
  SsmParams skip = random_ssm(3, 4, rng);
  skip.c.mutable_value().fill(0.0);
  skip.d_skip.mutable_value().fill(1.0);
  CHECK(selective_scan(ad::constant(x), skip).value() == x);

  SsmParams bad = scalar_ssm(NAN, 1.0, 1.0, 0.0);
  CHECK_THROWS_AS(selective_scan(ones, bad), NumericError);
  CHECK_THROWS_AS(selective_scan(ad::constant(Tensor({1, 3, 2}, 1.0)), scalar_ssm(0, 1, 1, 0)), ShapeError);
}

TEST_CASE("selective_scan at a = 0 equals a prefix-sum oracle") {
  Rng rng(3);
  for (std::size_t L : {1, 5, 16, 64}) {
    const std::size_t B = 2, D = 3, N = 8;
    const Tensor x = Tensor::normal({B, L, D}, 1.0, rng);
    SsmParams p = random_ssm(D, N, rng);
    p.a.mutable_value().fill(0.0);
    const Tensor y = selective_scan(ad::constant(x), p).value();
    double worst = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t d = 0; d < D; ++d) {
        double gain = 0.0;
        for (std::size_t n = 0; n < N; ++n) gain += p.c.value()[d * N + n] * p.b.value()[d * N + n];
        double prefix = 0.0;
        for (std::size_t k = 0; k < L; ++k) {
          const double xk = x[(b * L + k) * D + d];
          prefix += xk;
          const double expect = gain * prefix + p.d_skip.value()[d] * xk;
          worst = std::max(worst, std::abs(y[(b * L + k) * D + d] - expect));
        }
      }
    }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("discretisation is continuous at the series switch") {
  for (double a : {kSeriesSwitch, -kSeriesSwitch}) {
    CHECK(std::abs(zoh_phi_closed(a) - zoh_phi_series(a)) < 1e-8);
    const double fd = (zoh_phi_closed(a + 1e-6) - zoh_phi_closed(a - 1e-6)) / 2e-6;
    CHECK(std::abs(zoh_phi_grad(a) - fd) < 1e-6);
  }
  CHECK(zoh_phi(0.0) == 1.0);
  CHECK(zoh_phi_grad(0.0) == 0.5);
  CHECK(zoh_phi(std::log(2.0)) == doctest::Approx(1.0 / std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("selective_scan passes gradient checks") {
  Rng rng(4);
  for (auto [L, D, N] : {std::tuple{16, 1, 1}, {9, 2, 3}, {1, 2, 2}}) {
    SsmParams p = random_ssm(D, N, rng);
    std::vector<Tensor> point{Tensor::normal({2, static_cast<std::size_t>(L), static_cast<std::size_t>(D)}, 1.0, rng),
                              p.a.value(), p.b.value(), p.c.value(), p.d_skip.value()};
    auto fn = [](const std::vector<ad::Var>& v) { return selective_scan(v[0], {v[1], v[2], v[3], v[4]}); };
    const auto r = ad::grad_check(fn, point, 1e-6);
    INFO("L=" << L << " input " << r.worst_input << " analytic " << r.analytic << " fd " << r.numeric);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("embed_sequence examples") {
  Rng rng(5);
  const Tensor x = Tensor::normal({2, 6, 4}, 1.0, rng);
  const ad::Var zdir = ad::constant(Tensor({4}, 0.0));
  const ad::Var zpos = ad::constant(Tensor({6, 4}, 0.0));
  const Idx id{0, 1, 2, 3, 4, 5};
  CHECK(embed_sequence(ad::constant(x), {id}, zdir, zpos).value() == x);

  const ad::Var dir = ad::constant(Tensor::normal({4}, 1.0, rng));
  const ad::Var pos = ad::constant(Tensor::normal({6, 4}, 1.0, rng));
  const Tensor z = embed_sequence(ad::constant(Tensor({2, 6, 4}, 0.0)), {Idx{5, 4, 3, 2, 1, 0}}, dir, pos).value();
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t k = 0; k < 6; ++k) {
      for (std::size_t d = 0; d < 4; ++d) {
        CHECK(z[(b * 6 + k) * 4 + d] == dir.value()[d] + pos.value()[k * 4 + d]);
      }
    }
  }

  Idx perm{2, 0, 5, 1, 3, 4};
  const Tensor fwd = embed_sequence(ad::constant(x), {perm}, zdir, zpos).value();
  CHECK(edgss::inverse_reorder(fwd, perm) == x);
  CHECK_THROWS_AS(embed_sequence(ad::constant(x), {Idx{0, 1}}, zdir, zpos), ShapeError);
}

TEST_CASE("merge_directions examples") {
  Rng rng(6);
  const std::size_t B = 2, L = 5, D = 3;
  const Tensor y = Tensor::normal({B, L, D}, 1.0, rng);
  Tensor eye({D, D}, 0.0);
  for (std::size_t i = 0; i < D; ++i) eye[i * D + i] = 1.0;
  const ad::Var I = ad::constant(eye), zero_bias = ad::constant(Tensor({D}, 0.0));
  const Idx id{0, 1, 2, 3, 4};
  const std::array<TokenOrders, 4> ids{TokenOrders{id}, TokenOrders{id}, TokenOrders{id}, TokenOrders{id}};
  const ad::Var yv = ad::constant(y);

  Tensor four = y;
  for (double& v : four.storage()) v *= 4.0;
  CHECK(max_abs_diff(merge_directions({yv, yv, yv, yv}, ids, I, zero_bias).value(), four) < 1e-12);

  const ad::Var z = ad::constant(Tensor({B, L, D}, 0.0));
  CHECK(merge_directions({z, yv, z, z}, ids, I, zero_bias).value() == y);

  // Composition oracle with distinct per-batch orders.
  std::array<ad::Var, 4> outs;
  std::array<TokenOrders, 4> orders;
  for (std::size_t i = 0; i < 4; ++i) {
    outs[i] = ad::constant(Tensor::normal({B, L, D}, 1.0, rng));
    for (std::size_t b = 0; b < B; ++b) {
      Idx o = id;
      std::shuffle(o.begin(), o.end(), rng);
      orders[i].push_back(o);
    }
  }
  const Tensor W = Tensor::normal({D, D}, 1.0, rng), bias = Tensor::normal({D}, 1.0, rng);
  const Tensor got = merge_directions(outs, orders, ad::constant(W), ad::constant(bias)).value();
  Tensor expect({B, L, D});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t p = 0; p < L; ++p) {
      std::vector<double> s(D, 0.0);
      for (std::size_t i = 0; i < 4; ++i) {
        const auto& o = orders[i][b];
        const std::size_t k = static_cast<std::size_t>(std::find(o.begin(), o.end(), p) - o.begin());
        for (std::size_t d = 0; d < D; ++d) s[d] += outs[i].value()[(b * L + k) * D + d];
      }
      for (std::size_t r = 0; r < D; ++r) {
        double acc = bias[r];
        for (std::size_t d = 0; d < D; ++d) acc += W[r * D + d] * s[d];
        expect[(b * L + p) * D + r] = acc;
      }
    }
  }
  CHECK(max_abs_diff(got, expect) < 1e-12);
}

TEST_CASE("block_forward shape contract") {
  Rng rng(7);
  LacaVssConfig cfg;
  cfg.channels = 16;
  cfg.tokens = 256;
  LacaVssBlock block(cfg, rng);
  edgss::BinaryMask mask = edgss::BinaryMask::zeros(16, 16);
  mask.at(3, 12) = 1;
  const edgss::ScanBundle bundle = edgss::scan_mask(mask, 8);
  const ad::Var x = ad::constant(Tensor::normal({1, 16, 16, 16}, 1.0, rng));
  const Tensor y = block.forward(x, {&bundle}, false).value();
  CHECK(y.shape() == Shape{1, 16, 16, 16});
  CHECK(y.all_finite());

  const edgss::ScanBundle wrong = edgss::baseline_sequence(edgss::Baseline::kPara, 3, 3);
  CHECK_THROWS_AS(block.forward(x, {&wrong}, false), ShapeError);
}

TEST_CASE("block_forward shapes across random configs") {
  Rng rng(8);
  std::uniform_int_distribution<int> pick(0, 2);
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t C = std::array<std::size_t, 3>{4, 8, 12}[pick(rng)];
    const std::size_t H = std::array<std::size_t, 3>{4, 8, 8}[pick(rng)];
    const std::size_t W = std::array<std::size_t, 3>{4, 8, 16}[pick(rng)];
    const std::size_t cell = std::array<std::size_t, 3>{1, 2, 4}[pick(rng)];
    const std::size_t B = 1 + trial % 2;
    LacaVssConfig cfg;
    cfg.channels = C;
    cfg.tokens = H * W;
    LacaVssBlock block(cfg, rng);
    std::vector<edgss::ScanBundle> bundles;
    for (std::size_t b = 0; b < B; ++b) {
      bundles.push_back(edgss::baseline_sequence(edgss::all_baselines()[(trial + b) % 6], H / cell, W / cell));
    }
    std::vector<const edgss::ScanBundle*> ptrs;
    for (const auto& b : bundles) ptrs.push_back(&b);
    const Tensor y = block.forward(ad::constant(Tensor::normal({B, C, H, W}, 1.0, rng)), ptrs, true).value();
    CHECK(y.shape() == Shape{B, C, H, W});
    CHECK(y.all_finite());
  }
}

TEST_CASE("block_forward determinism and order sensitivity") {
  Rng rng(9);
  LacaVssConfig cfg;
  cfg.channels = 8;
  cfg.tokens = 64;
  const LacaVssBlock proto(cfg, rng);
  const ad::Var x = ad::constant(Tensor::normal({1, 8, 8, 8}, 1.0, rng));
  edgss::BinaryMask mask = edgss::BinaryMask::zeros(64, 64);
  for (std::size_t i = 0; i < 64; ++i) mask.at(i, (i * 7) % 64) = 1;
  const edgss::ScanBundle edg = edgss::scan_mask(mask, 8);
  const edgss::ScanBundle edg_copy = edg;
  const edgss::ScanBundle raster = edgss::baseline_sequence(edgss::Baseline::kPara, 8, 8);

  LacaVssBlock a = proto, b = proto, c = proto;
  const Tensor ya = a.forward(x, {&edg}, false).value();
  const Tensor yb = b.forward(x, {&edg_copy}, false).value();
  const Tensor yc = c.forward(x, {&raster}, false).value();
  CHECK(ya == yb);
  CHECK(max_abs_diff(ya, yc) > 1e-6);
}

TEST_CASE("block gate saturation and zero state space") {
  Rng rng(10);
  LacaVssConfig cfg;
  cfg.channels = 4;
  cfg.tokens = 16;
  LacaVssBlock block(cfg, rng);
  const edgss::ScanBundle bundle = edgss::baseline_sequence(edgss::Baseline::kDiagSnake, 2, 2);
  const ad::Var x = ad::constant(Tensor::normal({1, 4, 4, 4}, 1.0, rng));

  // Zero state space with unit skip: each direction returns its embedded input.
  for (auto& p : block.ssm) {
    p.a.mutable_value().fill(0.0);
    p.b.mutable_value().fill(0.0);
    p.c.mutable_value().fill(0.0);
    p.d_skip.mutable_value().fill(1.0);
  }
  block.gate_bias.mutable_value().fill(1e3);
  block.gate_weight.mutable_value().fill(0.0);

  LacaVssBlock twin = block;
  const Tensor y = block.forward(x, {&bundle}, false).value();

  ad::Var feat = x;
  for (auto& layer : twin.dpdd) feat = layer.forward(feat, false);
  const ad::Var tokens = ad::to_tokens(feat, 2, 2);
  std::array<ad::Var, 4> outs;
  std::array<TokenOrders, 4> orders;
  for (std::size_t i = 0; i < 4; ++i) {
    orders[i] = {expand_order(bundle.sequences[i].indices, 4)};
    outs[i] = embed_sequence(tokens, orders[i], twin.embedding.direction[i], twin.embedding.position);
  }
  const ad::Var merged = merge_directions(outs, orders, twin.merge_weight, twin.merge_bias);
  const Tensor expect = ad::add(feat, ad::from_tokens(merged, 4, 4, 2, 2)).value();
  CHECK(max_abs_diff(y, expect) < 1e-12);
}

TEST_CASE("dpdd and block pass gradient checks") {
  Rng rng(11);
  {
    DpddLayer base(4, 2, inner_config(4), rng);
    base.gn_gamma.mutable_value() = Tensor::uniform({4}, 0.5, 1.5, rng);
    base.gn_beta.mutable_value() = Tensor::uniform({4}, 0.2, 0.6, rng);
    StateRegistry reg;
    base.collect("", reg);
    std::vector<Tensor> point{Tensor::normal({2, 4, 4, 4}, 1.0, rng)};
    for (const Tensor& t : reg.values()) point.push_back(t);
    auto fn = [&](const std::vector<ad::Var>& v) {
      DpddLayer layer = base;
      StateRegistry r;
      layer.collect("", r);
      r.rebind(v, 1);
      return layer.forward(v[0], false);
    };
    const auto r = ad::grad_check(fn, point, 1e-6);
    INFO("dpdd input " << r.worst_input << " analytic " << r.analytic << " fd " << r.numeric);
    CHECK(r.max_rel_error < 1e-4);
  }
  {
    LacaVssConfig cfg;
    cfg.channels = 4;
    cfg.tokens = 16;
    cfg.state_dim = 2;
    cfg.groups = 2;
    LacaVssBlock base(cfg, rng);
    const edgss::ScanBundle bundle = edgss::baseline_sequence(edgss::Baseline::kParaSnake, 2, 2);
    StateRegistry reg;
    base.collect("", reg);
    std::vector<Tensor> point{Tensor::normal({1, 4, 4, 4}, 1.0, rng)};
    for (const Tensor& t : reg.values()) point.push_back(t);
    auto fn = [&](const std::vector<ad::Var>& v) {
      LacaVssBlock block = base;
      StateRegistry r;
      block.collect("", r);
      r.rebind(v, 1);
      return block.forward(v[0], {&bundle}, false);
    };
    const auto r = ad::grad_check(fn, point, 1e-6);
    INFO("block input " << r.worst_input << " element " << r.worst_element << " analytic " << r.analytic << " fd "
                        << r.numeric);
    CHECK(r.max_rel_error < 1e-4);
  }
}
