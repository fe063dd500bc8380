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

// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any of them fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lidar/edgss.hpp"
#include "lidar/lacavss.hpp"
#include "lidar/ld3cf.hpp"
#include "lidar/ldmk.hpp"
#include "lidar/model.hpp"
#include "lidar/numerics/grad_check.hpp"
#include "lidar/pipeline.hpp"

using namespace lidar;
using numerics::ConvMode;
using numerics::PoolExtent;
using numerics::PoolKind;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;
};

template <typename... Ts>
std::string fmt(Ts&&... parts) {
  std::ostringstream s;
  s.precision(6);
  (s << ... << parts);
  return s.str();
}

using Clock = std::chrono::steady_clock;

int failures = 0;

void run(int id, const char* name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  const bool in_time = limit_s <= 0.0 || secs < limit_s;
  const bool pass = out.ok && in_time;
  if (!pass) ++failures;
  const std::string budget = limit_s > 0.0 ? fmt(" (limit ", limit_s, " s", in_time ? "" : ", exceeded", ")") : "";
  std::printf("%s criterion %d (%s): %s; %.2f s%s\n", pass ? "PASS" : "FAIL", id, name, out.detail.c_str(), secs,
              budget.c_str());
  std::fflush(stdout);
}

edgss::BinaryMask random_mask(std::size_t h, std::size_t w, Rng& rng) {
  std::uniform_real_distribution<double> density(0.0, 0.6), u(0.0, 1.0);
  const double p = density(rng);
  std::vector<std::uint8_t> v(h * w);
  for (auto& x : v) x = u(rng) < p ? 1 : 0;
  return edgss::BinaryMask(h, w, std::move(v));
}

std::int64_t brute_sum(const edgss::BinaryMask& m, std::size_t i, std::size_t j, std::size_t p) {
  std::int64_t s = 0;
  for (std::size_t r = i; r < i + p; ++r) {
    for (std::size_t c = j; c < j + p; ++c) s += m.at(r, c);
  }
  return s;
}

// ------------------------------------------------------------------ 1

Outcome integral_oracle() {
  Rng rng(101);
  std::uniform_int_distribution<std::size_t> side(1, 64);
  std::size_t checked = 0, mismatches = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const auto mask = random_mask(side(rng), side(rng), rng);
    const edgss::IntegralImage ii(mask);
    const std::size_t pmax = std::min(mask.height, mask.width);
    const std::size_t p = std::uniform_int_distribution<std::size_t>(1, pmax)(rng);
    // The aligned grid used for scanning, then arbitrary placements.
    for (std::size_t i = 0; i + p <= mask.height; i += p) {
      for (std::size_t j = 0; j + p <= mask.width; j += p) {
        ++checked;
        if (edgss::patch_score(ii, i, j, p) != brute_sum(mask, i, j, p)) ++mismatches;
      }
    }
    std::uniform_int_distribution<std::size_t> ri(0, mask.height - p), rj(0, mask.width - p);
    for (int k = 0; k < 100; ++k) {
      const std::size_t i = ri(rng), j = rj(rng);
      ++checked;
      if (edgss::patch_score(ii, i, j, p) != brute_sum(mask, i, j, p)) ++mismatches;
    }
  }
  return {mismatches == 0, fmt(checked, " patch scores vs brute force, ", mismatches, " mismatches")};
}

// ------------------------------------------------------------------ 2

Outcome scan_contract() {
  Rng rng(202);
  const std::size_t patches[] = {1, 2, 4, 8};
  std::size_t violations = 0, sequences = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t p = patches[trial % 4];
    const std::size_t max_cells = 64 / p;
    std::uniform_int_distribution<std::size_t> cells(1, max_cells);
    const std::size_t rows = cells(rng), cols = cells(rng);
    const auto mask = random_mask(rows * p, cols * p, rng);
    const edgss::ScanBundle b = edgss::scan_mask(mask, p);
    const std::size_t n = rows * cols;
    std::vector<bool> crack(n);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) crack[r * cols + c] = brute_sum(mask, r * p, c * p, p) > 0;
    }
    const std::size_t n_crack = static_cast<std::size_t>(std::count(crack.begin(), crack.end(), true));
    for (auto d : {edgss::Direction::kHorizontal, edgss::Direction::kVertical}) {
      // Raster order of the direction: rows first, or columns first.
      std::vector<std::size_t> raster;
      if (d == edgss::Direction::kHorizontal) {
        for (std::size_t k = 0; k < n; ++k) raster.push_back(k);
      } else {
        for (std::size_t c = 0; c < cols; ++c)
          for (std::size_t r = 0; r < rows; ++r) raster.push_back(r * cols + c);
      }
      std::vector<std::size_t> want_crack, want_bg;
      for (std::size_t k : raster) (crack[k] ? want_crack : want_bg).push_back(k);
      const auto& tb = b.get(d, edgss::Order::kTopBottom).indices;
      const auto& bt = b.get(d, edgss::Order::kBottomTop).indices;
      for (const auto* seq : {&tb, &bt}) {
        ++sequences;
        if (!edgss::is_permutation(*seq, n)) ++violations;
        for (std::size_t k = 0; k < seq->size(); ++k) {
          if (crack[(*seq)[k]] != (k < n_crack)) {
            ++violations;
            break;
          }
        }
      }
      const std::vector<std::size_t> tb_crack(tb.begin(), tb.begin() + static_cast<std::ptrdiff_t>(n_crack));
      const std::vector<std::size_t> bt_crack(bt.begin(), bt.begin() + static_cast<std::ptrdiff_t>(n_crack));
      if (tb_crack != want_crack) ++violations;
      if (!std::equal(bt_crack.begin(), bt_crack.end(), tb_crack.rbegin())) ++violations;
    }
  }
  return {violations == 0, fmt(sequences, " sequences over 500 masks, ", violations, " violations")};
}

// ------------------------------------------------------------------ 3

Outcome cache_speedup() {
  const auto rows = pipeline::bench_scan(64, 8, 1000, 303);
  double diag = 0.0, cached = 0.0;
  bool valid = true;
  for (const auto& r : rows) {
    valid = valid && r.permutation_ok;
    if (r.strategy == "DiagSnake") diag = r.median_seconds;
    if (r.strategy == "edg-cached") cached = r.median_seconds;
  }
  const double ratio = cached > 0.0 ? diag / cached : 0.0;
  return {valid && ratio >= 100.0,
          fmt("DiagSnake median ", diag, " s, cached median ", cached, " s, ratio ", ratio, "x (need >= 100x)",
              valid ? "" : ", invalid sequence")};
}

// ------------------------------------------------------------------ 4

Outcome ldmk_identities() {
  Rng rng(404);
  std::size_t bad_topk = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 64)(rng);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, n)(rng);
    std::vector<double> scores(n);
    // Coarse values force ties.
    std::uniform_int_distribution<int> level(0, 9);
    for (auto& s : scores) s = level(rng) / 10.0;
    const auto mask = ldmk::select_topk_mask(scores, k);
    const auto ones = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1.0));
    const auto zeros = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 0.0));
    double kept_min = INFINITY, dropped_max = -INFINITY;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask[i] == 1.0) {
        kept_min = std::min(kept_min, scores[i]);
      } else {
        dropped_max = std::max(dropped_max, scores[i]);
      }
    }
    if (ones != k || ones + zeros != n || kept_min < dropped_max) ++bad_topk;
  }

  std::size_t bad_reparam = 0;
  ldmk::KernelBank bank;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t ks = ldmk::kBranchSizes[i];
    bank.kernels[i] = ad::parameter(Tensor::normal({6, 1, ks, ks}, 1.0, rng));
    bank.alpha[i] = ad::parameter(Tensor({1}, 0.0));
    bank.beta[i] = ad::parameter(Tensor({1}, 0.0));
  }
  for (std::size_t i = 0; i < 3; ++i) {
    if (!(ldmk::reparam_kernel(bank, ldmk::kBranchSizes[i]).value() == bank.kernels[i].value())) ++bad_reparam;
  }

  std::size_t bad_ema = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t c = std::uniform_int_distribution<std::size_t>(1, 64)(rng);
    std::vector<double> scores(c);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& s : scores) s = u(rng);
    double mean = 0.0;
    for (double s : scores) mean += s;
    mean /= static_cast<double>(c);
    ldmk::EmaState st;
    st.gamma = 0.0;
    st.rho_hat = u(rng);
    const std::size_t k = ldmk::ema_update(st, scores, c);
    const auto want_k = std::clamp<std::size_t>(static_cast<std::size_t>(std::floor(c * mean)), 1, c);
    if (st.rho_hat != mean || k != want_k) ++bad_ema;
  }

  const ldmk::LdmkConfig c64{64, 64, 32, 4};
  const std::size_t ours = ldmk::analytic_parameter_count(c64);
  const std::size_t plain = ldmk::plain_conv_parameter_count(64, 64, 3);
  Rng layer_rng(1);
  const std::size_t built = ldmk::LdmkLayer(c64, layer_rng).parameter_count();
  const double reduction = 1.0 - static_cast<double>(ours) / static_cast<double>(plain);
  const bool ok = bad_topk == 0 && bad_reparam == 0 && bad_ema == 0 && ours == 11366 && plain == 36864 &&
                  built == ours && reduction >= 0.65;
  return {ok, fmt("top-k failures ", bad_topk, "/1000, reparam failures ", bad_reparam, "/3, EMA failures ", bad_ema,
                  "/200, params ", ours, " (layer ", built, ") vs ", plain, ", reduction ", 100.0 * reduction, "%")};
}

// ------------------------------------------------------------------ 5

Outcome selective_scan_oracle() {
  Rng rng(505);
  double worst = 0.0;
  for (std::size_t L : {1, 2, 7, 16, 33, 64}) {
    const std::size_t B = 2, D = 3, N = 4;
    const Tensor x = Tensor::normal({B, L, D}, 1.0, rng);
    lacavss::SsmParams p{ad::constant(Tensor({D, N}, 0.0)), ad::constant(Tensor::normal({D, N}, 1.0, rng)),
                         ad::constant(Tensor::normal({D, N}, 1.0, rng)), ad::constant(Tensor::normal({D}, 1.0, rng))};
    const Tensor y = lacavss::selective_scan(ad::constant(x), p).value();
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t d = 0; d < D; ++d) {
        double gain = 0.0;
        for (std::size_t n = 0; n < N; ++n) gain += p.c.value()[d * N + n] * p.b.value()[d * N + n];
        double prefix = 0.0;
        for (std::size_t k = 0; k < L; ++k) {
          const double xk = x[(b * L + k) * D + d];
          prefix += xk;
          worst = std::max(worst, std::abs(y[(b * L + k) * D + d] - (gain * prefix + p.d_skip.value()[d] * xk)));
        }
      }
    }
  }
  double gap = 0.0;
  for (double a : {lacavss::kSeriesSwitch, -lacavss::kSeriesSwitch}) {
    gap = std::max(gap, std::abs(lacavss::zoh_phi_closed(a) - lacavss::zoh_phi_series(a)));
  }
  return {worst < 1e-10 && gap < 1e-8,
          fmt("prefix-sum max error ", worst, " (< 1e-10), closed vs series gap ", gap, " at 1e-4 (< 1e-8)")};
}

// ------------------------------------------------------------------ 6

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double energy(const Tensor& t) {
  double e = 0.0;
  for (double v : t.data()) e += v * v;
  return e;
}

// High band by a full complex DFT with the masks evaluated on mirrored
// frequencies, inverted by the direct sum.
Tensor dft_high_band(const Tensor& x, double r, double tau) {
  const std::size_t H = x.dim(2), W = x.dim(3);
  using cd = std::complex<double>;
  const double two_pi = 2.0 * std::numbers::pi;
  std::vector<cd> hi(H * W);
  for (std::size_t u = 0; u < H; ++u) {
    for (std::size_t v = 0; v < W; ++v) {
      cd s = 0.0;
      for (std::size_t i = 0; i < H; ++i) {
        for (std::size_t j = 0; j < W; ++j) {
          const double ang = -two_pi * (static_cast<double>(u * i) / H + static_cast<double>(v * j) / W);
          s += x.at(0, 0, i, j) * cd(std::cos(ang), std::sin(ang));
        }
      }
      const double dv = static_cast<double>(std::min(u, H - u)) / (H / 2.0);
      const double dh = static_cast<double>(std::min(v, W - v)) / (W / 2.0);
      hi[u * W + v] = s * std::max(sigmoid(tau * (dh - r)), sigmoid(tau * (dv - r)));
    }
  }
  Tensor out(x.shape());
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < W; ++j) {
      cd s = 0.0;
      for (std::size_t u = 0; u < H; ++u) {
        for (std::size_t v = 0; v < W; ++v) {
          const double ang = two_pi * (static_cast<double>(u * i) / H + static_cast<double>(v * j) / W);
          s += hi[u * W + v] * cd(std::cos(ang), std::sin(ang));
        }
      }
      out.at(0, 0, i, j) = s.real() / static_cast<double>(H * W);
    }
  }
  return out;
}

Outcome afdp_split() {
  const double r = 0.25, tau = 50.0;
  const std::size_t S = 16;
  const Tensor flat({1, 1, S, S}, 3.0);
  const auto f = ld3cf::band_split(flat, r, tau);
  const double low_share = energy(f.low) / (energy(f.low) + energy(f.high));

  Tensor board({1, 1, S, S});
  for (std::size_t i = 0; i < S; ++i)
    for (std::size_t j = 0; j < S; ++j) board.at(0, 0, i, j) = ((i + j) % 2) ? -1.0 : 1.0;
  const auto c = ld3cf::band_split(board, r, tau);
  const Tensor oracle_high = dft_high_band(board, r, tau);
  const double high_share = energy(c.high) / (energy(c.low) + energy(c.high));
  const double oracle_share = energy(oracle_high) / energy(board);
  const double oracle_gap = max_abs_diff(c.high, oracle_high);

  Rng rng(606);
  std::uniform_real_distribution<double> rd(0.0, 1.0), td(0.1, 200.0);
  std::size_t bins = 0, broken = 0;
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 8}, {16, 32}, {64, 64}, {2, 128}}) {
    const auto dist = ld3cf::spectral_distance(h, w);
    for (int trial = 0; trial < 25; ++trial) {
      const auto m = ld3cf::soft_masks(dist, ad::constant(Tensor({1}, rd(rng))), ad::constant(Tensor({1}, td(rng))));
      for (std::size_t i = 0; i < m.low.value().size(); ++i) {
        ++bins;
        if (m.low.value()[i] != 1.0 - std::max(m.high_h.value()[i], m.high_v.value()[i])) ++broken;
      }
    }
  }
  const bool ok = low_share > 0.99 && high_share > 0.95 && oracle_share > 0.95 && oracle_gap < 1e-10 && broken == 0;
  return {ok, fmt("constant low share ", low_share, ", checkerboard high share ", high_share, " (DFT oracle ",
                  oracle_share, ", max diff ", oracle_gap, "), complementarity failures ", broken, "/", bins, " bins")};
}

// ------------------------------------------------------------------ 7

ldmk::LdmkConfig square_config(std::size_t c) {
  ldmk::LdmkConfig cfg;
  cfg.in_channels = cfg.out_channels = c;
  return cfg;
}

Outcome gradient_checks() {
  using V = std::vector<ad::Var>;
  struct Case {
    std::string name;
    ad::DifferentiableFn fn;
    std::vector<Shape> shapes;
  };
  ad::BatchNormStats bn;
  const std::vector<Case> primitives = {
      {"add", [](const V& v) { return ad::add(v[0], v[1]); }, {{2, 3, 4, 4}, {1, 3, 1, 1}}},
      {"sub", [](const V& v) { return ad::sub(v[0], v[1]); }, {{2, 3}, {2, 3}}},
      {"mul", [](const V& v) { return ad::mul(v[0], v[1]); }, {{2, 3, 4, 4}, {2, 3, 1, 1}}},
      {"maximum", [](const V& v) { return ad::maximum(v[0], v[1]); }, {{3, 5}, {3, 5}}},
      {"scale", [](const V& v) { return ad::scale(ad::add_scalar(v[0], 0.3), -1.7); }, {{6}}},
      {"sigmoid", [](const V& v) { return ad::sigmoid(v[0]); }, {{2, 5}}},
      {"exp", [](const V& v) { return ad::exp(v[0]); }, {{7}}},
      {"mean", [](const V& v) { return ad::mean(ad::mul(v[0], v[0])); }, {{4, 3}}},
      {"linear", [](const V& v) { return ad::linear(v[0], v[1], v[2]); }, {{2, 3, 4}, {5, 4}, {5}}},
      {"conv_pointwise", [](const V& v) { return ad::conv2d(v[0], v[1], ConvMode::kPointwise, v[2]); },
       {{2, 3, 4, 5}, {2, 3, 1, 1}, {2}}},
      {"conv_depthwise", [](const V& v) { return ad::conv2d(v[0], v[1], ConvMode::kDepthwise); },
       {{1, 2, 6, 5}, {2, 1, 5, 3}}},
      {"avg_pool", [](const V& v) { return ad::pool2d(v[0], PoolKind::kAvg, PoolExtent::Local(3)); }, {{1, 2, 5, 4}}},
      {"max_pool", [](const V& v) { return ad::pool2d(v[0], PoolKind::kMax, PoolExtent::Local(3)); }, {{1, 2, 5, 4}}},
      {"global_avg", [](const V& v) { return ad::global_avg_pool(v[0]); }, {{2, 3, 4, 4}}},
      {"group_norm", [](const V& v) { return ad::group_norm(v[0], 2, v[1], v[2]); }, {{2, 4, 3, 3}, {4}, {4}}},
      {"batch_norm", [&bn](const V& v) { return ad::batch_norm(v[0], v[1], v[2], bn, true); },
       {{2, 3, 3, 2}, {3}, {3}}},
      {"concat_slice", [](const V& v) { return ad::slice_channels(ad::concat_channels({v[0], v[1]}), 1, 3); },
       {{2, 2, 3, 3}, {2, 3, 3, 3}}},
      {"upsample", [](const V& v) { return ad::upsample_bilinear(v[0], 8, 6); }, {{1, 2, 4, 3}}},
      {"rfft2", [](const V& v) { return ad::rfft2(v[0]); }, {{1, 2, 4, 8}}},
      {"irfft2", [](const V& v) { return ad::irfft2(v[0], 8); }, {{1, 4, 4, 5}}},
      {"tokens", [](const V& v) { return ad::mul(ad::to_tokens(v[0], 2, 2), ad::to_tokens(v[0], 1, 1)); },
       {{1, 3, 4, 4}}},
      {"gather", [](const V& v) { return ad::gather_tokens(v[0], {{2, 0, 1}, {1, 1, 0}}); }, {{2, 3, 4}}},
      {"patchify", [](const V& v) { return ad::patchify(v[0], 2); }, {{2, 2, 4, 4}}},
  };
  Rng rng(707);
  double worst = 0.0;
  std::string worst_name;
  auto note = [&](const std::string& name, double err) {
    if (err >= worst) {
      worst = err;
      worst_name = name;
    }
  };
  for (const auto& c : primitives) {
    for (int trial = 0; trial < 3; ++trial) {
      std::vector<Tensor> point;
      for (const auto& s : c.shapes) point.push_back(Tensor::normal(s, 1.0, rng));
      note(c.name, ad::grad_check(c.fn, point, 1e-6, static_cast<std::uint64_t>(trial)).max_rel_error);
    }
  }

  {
    lacavss::SsmParams p{ad::parameter(Tensor::uniform({2, 3}, -1.0, -0.1, rng)),
                         ad::parameter(Tensor::normal({2, 3}, 1.0, rng)), ad::parameter(Tensor::normal({2, 3}, 1.0, rng)),
                         ad::parameter(Tensor::normal({2}, 1.0, rng))};
    std::vector<Tensor> point{Tensor::normal({2, 9, 2}, 1.0, rng), p.a.value(), p.b.value(), p.c.value(),
                              p.d_skip.value()};
    auto fn = [](const V& v) { return lacavss::selective_scan(v[0], {v[1], v[2], v[3], v[4]}); };
    note("selective_scan", ad::grad_check(fn, point, 1e-6).max_rel_error);
  }

  for (auto mode : {ldmk::MaskMode::kBinary, ldmk::MaskMode::kSoft}) {
    ldmk::LdmkLayer base(ldmk::LdmkConfig{4, 6, 4, 2}, rng);
    base.ema.active = 3;
    for (std::size_t i = 0; i < 3; ++i) {
      base.bank.alpha[i].mutable_value()[0] = 0.1;
      base.bank.beta[i].mutable_value()[0] = -0.05;
    }
    StateRegistry reg;
    base.collect("", reg);
    std::vector<Tensor> point{Tensor::normal({2, 4, 5, 5}, 1.0, rng)};
    for (const Tensor& t : reg.values()) point.push_back(t);
    auto fn = [&](const V& v) {
      ldmk::LdmkLayer layer = base;
      StateRegistry r;
      layer.collect("", r);
      r.rebind(v, 1);
      return layer.forward(v[0], false, mode);
    };
    note(mode == ldmk::MaskMode::kBinary ? "ldmk(binary)" : "ldmk(soft)", ad::grad_check(fn, point, 1e-6).max_rel_error);
  }

  {
    lacavss::DpddLayer base(4, 2, square_config(4), rng);
    base.gn_gamma.mutable_value() = Tensor::uniform({4}, 0.5, 1.5, rng);
    base.gn_beta.mutable_value() = Tensor::uniform({4}, 0.2, 0.6, rng);
    StateRegistry reg;
    base.collect("", reg);
    std::vector<Tensor> point{Tensor::normal({2, 4, 4, 4}, 1.0, rng)};
    for (const Tensor& t : reg.values()) point.push_back(t);
    auto fn = [&](const V& v) {
      lacavss::DpddLayer layer = base;
      StateRegistry r;
      layer.collect("", r);
      r.rebind(v, 1);
      return layer.forward(v[0], false);
    };
    note("dpdd", ad::grad_check(fn, point, 1e-6).max_rel_error);
  }

  {
    struct Stack {
      ld3cf::AfdpLayer afdp_rgb, afdp_aux;
      ld3cf::DualPoolFusion fusion;
      ld3cf::CrossScaleGate gate;
      ld3cf::SegHead head;
      void collect(StateRegistry& r) {
        afdp_rgb.collect("afdp0", r);
        afdp_aux.collect("afdp1", r);
        fusion.collect("fusion", r);
        gate.collect("gate", r);
        head.collect("head", r);
      }
    };
    Stack base{ld3cf::AfdpLayer(4, square_config(4), rng), ld3cf::AfdpLayer(4, square_config(4), rng),
               ld3cf::DualPoolFusion(4, 1, square_config(4), rng), ld3cf::CrossScaleGate(4, 2, rng),
               ld3cf::SegHead(4, 2, rng)};
    base.head.out_weight.mutable_value() = Tensor::normal({1, 4, 1, 1}, 0.5, rng);
    StateRegistry reg;
    base.collect(reg);
    std::vector<Tensor> point{Tensor::normal({1, 4, 8, 8}, 1.0, rng), Tensor::normal({1, 4, 8, 8}, 1.0, rng)};
    for (const Tensor& t : reg.values()) point.push_back(t);
    auto fn = [&](const V& v) {
      Stack s = base;
      StateRegistry r;
      s.collect(r);
      r.rebind(v, 2);
      const ad::Var rgb = s.fusion.rgb_enhance(s.afdp_rgb.forward(v[0], false));
      const ad::Var aux = s.afdp_aux.forward(v[1], false);
      const ad::Var f0 = ld3cf::sum_modalities(rgb, {s.fusion.fuse_modality(rgb, aux, 0, false)});
      const ad::Var f1 = s.gate.forward(ad::scale(f0, 0.5), f0, 1);
      return s.head.forward({f0, f1}, 8, 8);
    };
    note("ld3cf stack", ad::grad_check(fn, point, 1e-5).max_rel_error);
  }

  return {worst < 1e-4, fmt(primitives.size(), " primitives + selective scan + LDMK (binary, soft) + DPDD + fusion stack; "
                            "worst relative error ", worst, " in ", worst_name, " (< 1e-4)")};
}

// ------------------------------------------------------------------ 8

Tensor map_of(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({1, 1, 1, n}, std::move(v));
}

Outcome loss_identities() {
  const Tensor t = map_of({1, 0, 1, 1, 0, 0});
  const auto perfect = pipeline::loss_terms(ad::constant(t), t);
  const double dice0 = perfect.dice.value()[0], bce0 = perfect.bce.value()[0];

  Rng rng(808);
  bool sum_exact = true;
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor p = Tensor::uniform({2, 1, 4, 4}, 0.01, 0.99, rng);
    Tensor y({2, 1, 4, 4});
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::bernoulli_distribution(0.3)(rng) ? 1.0 : 0.0;
    const auto terms = pipeline::loss_terms(ad::constant(p), y);
    sum_exact = sum_exact && terms.total.value()[0] == terms.dice.value()[0] + terms.bce.value()[0];
  }

  const double dice_third = pipeline::dice_loss(ad::constant(map_of({0.5, 0.5})), map_of({1, 0}), 1.0).value()[0];
  const double bce_half = pipeline::bce_loss(ad::constant(map_of({0.5})), map_of({1})).value()[0];
  const double e1 = std::abs(dice_third - 1.0 / 3.0), e2 = std::abs(bce_half - std::log(2.0));
  const bool ok = dice0 == 0.0 && bce0 < 1e-6 && sum_exact && e1 < 1e-9 && e2 < 1e-9;
  return {ok, fmt("perfect dice ", dice0, ", perfect bce ", bce0, ", total == dice + bce ",
                  sum_exact ? "exact" : "broken", ", |dice - 1/3| ", e1, ", |bce - ln 2| ", e2)};
}

// ------------------------------------------------------------------ 9

model::LidarConfig small_config(std::vector<std::size_t> channels) {
  model::LidarConfig c;
  c.height_px = c.width_px = 32;
  c.stages = 2;
  c.width = 8;
  c.state_dim = 4;
  c.groups = 2;
  c.modality_channels = std::move(channels);
  return c;
}

Outcome modality_symmetry() {
  Rng rng(909);
  const ad::Var rgb = ad::constant(Tensor::normal({2, 8, 8, 8}, 1.0, rng));
  std::vector<ad::Var> fused;
  for (int l = 0; l < 4; ++l) fused.push_back(ad::constant(Tensor::normal({2, 8, 8, 8}, std::pow(10.0, l), rng)));
  const Tensor ref = ld3cf::sum_modalities(rgb, fused).value();
  std::vector<std::size_t> perm{0, 1, 2, 3};
  std::size_t perms = 0, differing = 0;
  while (std::next_permutation(perm.begin(), perm.end())) {
    std::vector<ad::Var> shuffled;
    for (auto k : perm) shuffled.push_back(fused[k]);
    ++perms;
    if (!(ld3cf::sum_modalities(rgb, shuffled).value() == ref)) ++differing;
  }

  // Whole network: swapping auxiliary inputs together with their weights.
  model::LidarModel net(small_config({3, 1, 2}), 4);
  const std::vector<ad::Var> inputs{ad::constant(Tensor::uniform({1, 3, 32, 32}, 0.0, 1.0, rng)),
                                    ad::constant(Tensor::uniform({1, 1, 32, 32}, 0.0, 1.0, rng)),
                                    ad::constant(Tensor::uniform({1, 2, 32, 32}, 0.0, 1.0, rng))};
  const auto bundle = edgss::baseline_sequence(edgss::Baseline::kPara, 4, 4);
  const Tensor before = net.forward(inputs, {&bundle}, false).value();
  net.permute_auxiliary({1, 0});
  const Tensor after = net.forward({inputs[0], inputs[2], inputs[1]}, {&bundle}, false).value();
  const bool net_same = before == after;

  // Unimodal: generate, prescan, train two steps, predict, score.
  pipeline::SyntheticSpec spec;
  spec.height = spec.width = 32;
  spec.count = 4;
  spec.modalities = {{"rgb", 3}};
  spec.seed = 9;
  const auto data = pipeline::generate_synthetic(spec);
  const auto cache = pipeline::prescan(data, pipeline::MaskSource::kGtDilate, 8);
  std::vector<edgss::ScanBundle> bundles;
  for (const auto& s : data.samples) bundles.push_back(*cache.find(s.id));
  model::LidarModel uni(small_config({3}), 2);
  pipeline::TrainConfig tc;
  tc.steps = 2;
  tc.batch = 2;
  const auto result = pipeline::train(uni, data, bundles, tc);
  const auto preds = pipeline::predict(uni, data, bundles);
  bool uni_ok = result.curve.size() == 2 && preds.size() == 4;
  for (const auto& p : preds) {
    uni_ok = uni_ok && p.shape() == Shape{1, 1, 32, 32};
    for (double v : p.data()) uni_ok = uni_ok && std::isfinite(v) && v >= 0.0 && v <= 1.0;
  }
  std::vector<Tensor> gts;
  for (const auto& s : data.samples) gts.push_back(s.gt);
  const auto report = pipeline::compute_metrics(preds, gts);

  return {differing == 0 && net_same && uni_ok,
          fmt("modality sum identical under ", perms - differing, "/", perms, " permutations, network output ",
              net_same ? "bit-identical" : "changed", " after swapping auxiliaries, M=1 train/predict/eval ",
              uni_ok ? "ok" : "failed", " (F1 ", report.f1, ")")};
}

// ------------------------------------------------------------------ 10

struct SmokeRun {
  std::vector<pipeline::LossRecord> curve;
  std::vector<Tensor> preds;
};

SmokeRun smoke_run(const pipeline::Dataset& data, const std::vector<edgss::ScanBundle>& bundles) {
  model::LidarConfig cfg;  // 64 x 64, RGB + depth, desk defaults
  model::LidarModel net(cfg, 1);
  pipeline::TrainConfig tc;
  tc.steps = 200;
  tc.seed = 1;
  SmokeRun run;
  run.curve = pipeline::train(net, data, bundles, tc).curve;
  run.preds = pipeline::predict(net, data, bundles);
  return run;
}

// Shared with criterion 11.
std::vector<Tensor> smoke_preds, smoke_gts;

Outcome smoke_training() {
  pipeline::SyntheticSpec spec;
  spec.seed = 1;
  const auto data = pipeline::generate_synthetic(spec);
  const auto cache = pipeline::prescan(data, pipeline::MaskSource::kGtDilate, 8);
  std::vector<edgss::ScanBundle> bundles;
  for (const auto& s : data.samples) bundles.push_back(*cache.find(s.id));

  const SmokeRun a = smoke_run(data, bundles);
  const SmokeRun b = smoke_run(data, bundles);
  bool same = a.curve.size() == b.curve.size();
  for (std::size_t i = 0; same && i < a.curve.size(); ++i) {
    same = a.curve[i].total == b.curve[i].total && a.curve[i].dice == b.curve[i].dice && a.curve[i].bce == b.curve[i].bce;
  }
  for (std::size_t i = 0; same && i < a.preds.size(); ++i) same = a.preds[i] == b.preds[i];

  const double initial = a.curve.front().total;
  const std::size_t tail = std::min<std::size_t>(10, a.curve.size());
  double final_loss = 0.0;
  for (std::size_t i = a.curve.size() - tail; i < a.curve.size(); ++i) final_loss += a.curve[i].total;
  final_loss /= static_cast<double>(tail);
  const double reduction = 1.0 - final_loss / initial;

  for (const auto& s : data.samples) smoke_gts.push_back(s.gt);
  smoke_preds = a.preds;
  const auto report = pipeline::compute_metrics(a.preds, smoke_gts);

  const bool ok = a.curve.size() == 200 && reduction >= 0.5 && report.f1 > 0.5 && same;
  return {ok, fmt(data.samples.size(), " images, ", a.curve.size(), " steps, loss ", initial, " -> ", final_loss,
                  " (mean of last ", tail, "; last step ", a.curve.back().total, "), reduction ", 100.0 * reduction,
                  "% (need >= 50%), training F1 ", report.f1, " (need > 0.5), ODS ", report.ods, ", mIoU ",
                  report.miou, ", rerun ", same ? "identical" : "differs")};
}

// ------------------------------------------------------------------ 11

Outcome metric_sanity() {
  pipeline::SyntheticSpec spec;
  spec.count = 16;
  spec.seed = 11;
  const auto data = pipeline::generate_synthetic(spec);
  std::vector<Tensor> gts;
  for (const auto& s : data.samples) gts.push_back(s.gt);
  // An empty target with an empty prediction is a perfect image too.
  gts.push_back(Tensor({1, 1, 64, 64}, 0.0));
  const auto perfect = pipeline::compute_metrics(gts, gts);
  const bool perfect_ok = perfect.ods == 1.0 && perfect.ois == 1.0 && perfect.f1 == 1.0 && perfect.miou == 1.0;

  Rng rng(1111);
  std::size_t sets = 1, ordered = perfect.ois >= perfect.ods ? 1 : 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 6)(rng);
    std::vector<Tensor> preds, targets;
    for (std::size_t k = 0; k < n; ++k) {
      Tensor t({1, 1, 8, 8});
      const double density = std::uniform_real_distribution<double>(0.0, 0.5)(rng);
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::bernoulli_distribution(density)(rng) ? 1.0 : 0.0;
      Tensor p = Tensor::uniform({1, 1, 8, 8}, 0.0, 1.0, rng);
      // Blend towards the truth so sets range from random to near perfect.
      const double w = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      for (std::size_t i = 0; i < p.size(); ++i) p[i] = w * t[i] + (1.0 - w) * p[i];
      preds.push_back(p);
      targets.push_back(t);
    }
    const auto r = pipeline::compute_metrics(preds, targets);
    ++sets;
    if (r.ois >= r.ods) ++ordered;
  }
  if (!smoke_preds.empty()) {
    const auto r = pipeline::compute_metrics(smoke_preds, smoke_gts);
    ++sets;
    if (r.ois >= r.ods) ++ordered;
  }
  return {perfect_ok && ordered == sets,
          fmt("perfect set ODS/OIS/F1/mIoU = ", perfect.ods, "/", perfect.ois, "/", perfect.f1, "/", perfect.miou,
              ", OIS >= ODS on ", ordered, "/", sets, " sets")};
}

}  // namespace

int main() {
  run(1, "integral image oracle", 5, integral_oracle);
  run(2, "scan sequence contract", 5, scan_contract);
  run(3, "scan cache speedup", 30, cache_speedup);
  run(4, "LDMK identities", 0, ldmk_identities);
  run(5, "selective scan oracle", 0, selective_scan_oracle);
  run(6, "AFDP frequency split", 10, afdp_split);
  run(7, "gradient checks", 60, gradient_checks);
  run(8, "loss identities", 0, loss_identities);
  run(9, "modality symmetry", 0, modality_symmetry);
  run(10, "smoke training", 600, smoke_training);
  run(11, "metric sanity", 0, metric_sanity);
  std::printf("%d of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
