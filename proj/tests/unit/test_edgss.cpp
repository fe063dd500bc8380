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

#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "doctest.h"
#include "lidar/edgss.hpp"

using namespace lidar;
using namespace lidar::edgss;
using Idx = std::vector<std::size_t>;

namespace {

BinaryMask random_mask(std::size_t h, std::size_t w, double density, Rng& rng) {
  std::bernoulli_distribution on(density);
  std::vector<std::uint8_t> v(h * w);
  for (auto& x : v) x = on(rng) ? 1 : 0;
  return BinaryMask(h, w, std::move(v));
}

std::int64_t brute_sum(const BinaryMask& m, std::size_t r0, std::size_t c0, std::size_t r1, std::size_t c1) {
  std::int64_t s = 0;
  for (std::size_t r = r0; r < r1; ++r) {
    for (std::size_t c = c0; c < c1; ++c) s += m.at(r, c);
  }
  return s;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("lidar_edgss_" + name);
}

}  // namespace

TEST_CASE("integral_image examples") {
  const IntegralImage zero(BinaryMask::zeros(4, 4));
  for (std::size_t x = 0; x <= 4; ++x) {
    for (std::size_t y = 0; y <= 4; ++y) CHECK(zero.at(x, y) == 0);
  }
  const IntegralImage ones(BinaryMask(2, 2, {1, 1, 1, 1}));
  CHECK(ones.at(2, 2) == 4);
  CHECK(ones.at(0, 2) == 0);
  CHECK(ones.at(2, 0) == 0);
  CHECK_THROWS_AS(BinaryMask(1, 2, {0, 2}), std::invalid_argument);
  const std::vector<double> bad{0.0, 0.5};
  CHECK_THROWS_AS(BinaryMask::from_doubles(1, 2, bad), std::invalid_argument);
}

TEST_CASE("integral_image rectangle sums match nested loops") {
  Rng rng(11);
  const BinaryMask m = random_mask(16, 16, 0.4, rng);
  const IntegralImage I(m);
  CHECK(I.at(16, 16) == static_cast<std::int64_t>(m.count()));
  for (std::size_t r0 = 0; r0 <= 16; ++r0) {
    for (std::size_t r1 = r0; r1 <= 16; ++r1) {
      for (std::size_t c0 = 0; c0 <= 16; ++c0) {
        for (std::size_t c1 = c0; c1 <= 16; ++c1) {
          if (I.rect_sum(r0, c0, r1, c1) != brute_sum(m, r0, c0, r1, c1)) {
            FAIL("mismatch at rows [" << r0 << "," << r1 << ") cols [" << c0 << "," << c1 << ")");
          }
        }
      }
    }
  }
  // Monotone along both axes.
  for (std::size_t x = 0; x < 16; ++x) {
    for (std::size_t y = 0; y < 16; ++y) {
      CHECK(I.at(x + 1, y) >= I.at(x, y));
      CHECK(I.at(x, y + 1) >= I.at(x, y));
    }
  }
}

TEST_CASE("patch_score examples") {
  const IntegralImage zero(BinaryMask::zeros(8, 8));
  CHECK(patch_score(zero, 4, 4, 4) == 0);
  const IntegralImage ones(BinaryMask(4, 4, std::vector<std::uint8_t>(16, 1)));
  for (std::size_t i : {0, 2}) {
    for (std::size_t j : {0, 2}) CHECK(patch_score(ones, i, j, 2) == 4);
  }
  BinaryMask single = BinaryMask::zeros(8, 8);
  single.at(3, 3) = 1;
  const IntegralImage s(single);
  CHECK(patch_score(s, 0, 0, 4) == 1);
  CHECK(patch_score(s, 4, 0, 4) == 0);
  CHECK_THROWS_AS(patch_score(s, 6, 0, 4), std::out_of_range);
}

TEST_CASE("partition_patches examples") {
  const auto zero = PatchGrid::build(IntegralImage(BinaryMask::zeros(8, 8)), 2);
  auto p = partition_patches(zero, Direction::kHorizontal);
  CHECK(p.crack.empty());
  CHECK(p.background.size() == 16);

  const auto full = PatchGrid::build(IntegralImage(BinaryMask(8, 8, std::vector<std::uint8_t>(64, 1))), 2);
  CHECK(partition_patches(full, Direction::kVertical).background.empty());

  BinaryMask checker = BinaryMask::zeros(16, 16);
  for (std::size_t r = 0; r < 16; ++r) {
    for (std::size_t c = 0; c < 16; ++c) checker.at(r, c) = ((r / 4 + c / 4) % 2) ? 1 : 0;
  }
  const auto g = PatchGrid::build(IntegralImage(checker), 4);
  CHECK(partition_patches(g, Direction::kHorizontal).crack.size() == g.count() / 2);
  CHECK(partition_patches(g, Direction::kVertical).crack.size() == g.count() / 2);

  CHECK_THROWS_AS(PatchGrid::build(IntegralImage(BinaryMask::zeros(8, 6)), 4), std::invalid_argument);
}

TEST_CASE("build_sequences examples") {
  const ScanBundle zero = scan_mask(BinaryMask::zeros(6, 6), 2);
  CHECK(zero.get(Direction::kHorizontal, Order::kTopBottom).indices == Idx{0, 1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(zero.get(Direction::kVertical, Order::kTopBottom).indices == Idx{0, 3, 6, 1, 4, 7, 2, 5, 8});
  CHECK(zero.get(Direction::kHorizontal, Order::kBottomTop).indices == Idx{8, 7, 6, 5, 4, 3, 2, 1, 0});

  BinaryMask one = BinaryMask::zeros(6, 6);
  one.at(3, 5) = 1;  // grid cell (1, 2) = id 5
  const ScanBundle b = scan_mask(one, 2);
  CHECK(b.get(Direction::kHorizontal, Order::kTopBottom).indices == Idx{5, 0, 1, 2, 3, 4, 6, 7, 8});
  CHECK(b.get(Direction::kHorizontal, Order::kBottomTop).indices == Idx{5, 8, 7, 6, 4, 3, 2, 1, 0});
  CHECK(b.get(Direction::kVertical, Order::kTopBottom).indices == Idx{5, 0, 3, 6, 1, 4, 7, 2, 8});
  CHECK(b.get(Direction::kHorizontal, Order::kTopBottom).crack_length == 1);
  CHECK(b.mask_hash == one.hash());
  CHECK(b.patch_size == 2);
}

TEST_CASE("build_sequences properties over random masks") {
  Rng rng(5);
  std::uniform_int_distribution<int> grid(1, 8);
  std::uniform_real_distribution<double> density(0.0, 0.05);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t p = 4, rows = grid(rng), cols = grid(rng);
    const BinaryMask m = random_mask(rows * p, cols * p, density(rng), rng);
    const ScanBundle b = scan_mask(m, p);
    for (Direction d : {Direction::kHorizontal, Direction::kVertical}) {
      const auto& tb = b.get(d, Order::kTopBottom);
      const auto& bt = b.get(d, Order::kBottomTop);
      REQUIRE(is_permutation(tb.indices, rows * cols));
      REQUIRE(is_permutation(bt.indices, rows * cols));
      REQUIRE(tb.crack_length == bt.crack_length);
      const std::size_t n = tb.crack_length;
      for (std::size_t k = 0; k < rows * cols; ++k) {
        const std::size_t id = tb.indices[k];
        const bool crack = brute_sum(m, id / cols * p, id % cols * p, id / cols * p + p, id % cols * p + p) > 0;
        REQUIRE(crack == (k < n));
      }
      for (std::size_t k = 0; k < n; ++k) REQUIRE(bt.indices[k] == tb.indices[n - 1 - k]);
    }
  }
}

TEST_CASE("baseline_sequence examples") {
  const ScanBundle para = baseline_sequence(Baseline::kPara, 2, 2);
  CHECK(para.get(Direction::kHorizontal, Order::kTopBottom).indices == Idx{0, 1, 2, 3});
  CHECK(para.get(Direction::kHorizontal, Order::kBottomTop).indices == Idx{3, 2, 1, 0});
  CHECK(para.get(Direction::kVertical, Order::kTopBottom).indices == Idx{0, 2, 1, 3});

  CHECK(baseline_sequence(Baseline::kParaSnake, 2, 3).get(Direction::kHorizontal, Order::kTopBottom).indices ==
        Idx{0, 1, 2, 5, 4, 3});
  CHECK(baseline_sequence(Baseline::kParaSnake, 2, 3).get(Direction::kVertical, Order::kTopBottom).indices ==
        Idx{0, 3, 4, 1, 2, 5});
  CHECK(baseline_sequence(Baseline::kDiag, 2, 2).get(Direction::kHorizontal, Order::kTopBottom).indices ==
        Idx{0, 1, 2, 3});
  // 3x3 anti-diagonals: {0}, {1,3}, {2,4,6}, {5,7}, {8}; snake flips odd ones.
  CHECK(baseline_sequence(Baseline::kDiag, 3, 3).get(Direction::kHorizontal, Order::kTopBottom).indices ==
        Idx{0, 1, 3, 2, 4, 6, 5, 7, 8});
  CHECK(baseline_sequence(Baseline::kDiagSnake, 3, 3).get(Direction::kHorizontal, Order::kTopBottom).indices ==
        Idx{0, 3, 1, 2, 4, 6, 7, 5, 8});
  CHECK(baseline_sequence(Baseline::kBiParaSnake, 2, 3).get(Direction::kHorizontal, Order::kTopBottom).indices ==
        Idx{0, 3, 1, 4, 2, 5});

  CHECK(parse_baseline("DiagSnake") == Baseline::kDiagSnake);
  CHECK_THROWS_AS(parse_baseline("SASS"), std::invalid_argument);
}

TEST_CASE("baselines are permutations and mask-independent") {
  for (Baseline k : all_baselines()) {
    for (auto [rows, cols] : {std::pair{1, 1}, {1, 5}, {4, 1}, {3, 7}, {8, 8}, {6, 4}}) {
      const ScanBundle b = baseline_sequence(k, rows, cols);
      for (const auto& s : b.sequences) CHECK(is_permutation(s.indices, rows * cols));
      CHECK(b == baseline_sequence(k, rows, cols));
    }
  }
}

TEST_CASE("reorder examples") {
  Rng rng(3);
  const Tensor x = Tensor::normal({2, 5, 3}, 1.0, rng);
  const Idx id{0, 1, 2, 3, 4};
  CHECK(reorder(x, id) == x);
  const Tensor two({1, 2, 1}, std::vector<double>{7, 9});
  CHECK(reorder(two, Idx{1, 0}) == Tensor({1, 2, 1}, std::vector<double>{9, 7}));
  Idx perm{3, 0, 4, 1, 2};
  const Tensor y = reorder(x, perm);
  for (std::size_t k = 0; k < 5; ++k) {
    for (std::size_t d = 0; d < 3; ++d) CHECK(y[(5 + k) * 3 + d] == x[(5 + perm[k]) * 3 + d]);
  }
  CHECK(inverse_reorder(y, perm) == x);
  for (int t = 0; t < 20; ++t) {
    std::shuffle(perm.begin(), perm.end(), rng);
    CHECK(inverse_reorder(reorder(x, perm), perm) == x);
  }
  CHECK_THROWS_AS(reorder(x, Idx{0, 1}), ShapeError);
  CHECK_THROWS_AS(reorder(x, Idx{0, 0, 1, 2, 3}), std::invalid_argument);
}

TEST_CASE("scan cache roundtrip and schema") {
  Rng rng(9);
  ScanCache cache(4);
  for (int i = 0; i < 6; ++i) {
    const BinaryMask m = random_mask(16, 32, 0.02, rng);
    cache.insert("img" + std::to_string(i), scan_mask(m, 4));
  }
  const auto path = temp_file("roundtrip.json");
  save_cache(cache, path);
  const ScanCache back = load_cache(path);
  CHECK(back == cache);
  save_cache(back, temp_file("roundtrip2.json"));
  std::ifstream a(path), b(temp_file("roundtrip2.json"));
  CHECK(std::string(std::istreambuf_iterator<char>(a), {}) == std::string(std::istreambuf_iterator<char>(b), {}));

  const ScanCache empty(8);
  const ScanCache empty_back = ScanCache::from_json(empty.to_json());
  CHECK(empty_back.empty());
  CHECK(empty_back.patch_size() == 8);
  CHECK(empty.to_json() == "{\"version\":1,\"patch_size\":8,\"entries\":{}}\n");
}

TEST_CASE("scan cache detects mask changes and corrupt files") {
  BinaryMask m = BinaryMask::zeros(8, 8);
  m.at(1, 1) = 1;
  ScanCache cache(4);
  cache.insert("a", scan_mask(m, 4));
  CHECK(cache.lookup("a", m.hash()).status == ScanCache::Status::kHit);
  CHECK(cache.lookup("b", m.hash()).status == ScanCache::Status::kMissing);
  BinaryMask perturbed = m;
  perturbed.at(7, 7) = 1;
  const auto miss = cache.lookup("a", perturbed.hash());
  CHECK(miss.status == ScanCache::Status::kHashMismatch);
  CHECK(miss.message.find(hash_hex(m.hash())) != std::string::npos);
  CHECK(miss.message.find(hash_hex(perturbed.hash())) != std::string::npos);

  CHECK_THROWS_AS(ScanCache::from_json("{not json"), CacheError);
  CHECK_THROWS_AS(ScanCache::from_json(R"({"version":2,"patch_size":4,"entries":{}})"), CacheError);
  CHECK_THROWS_AS(ScanCache::from_json(R"({"version":1,"entries":{}})"), CacheError);
  CHECK_THROWS_AS(ScanCache::from_json(
                      R"({"version":1,"patch_size":4,"entries":{"x":{"mask_hash":"00000000000000ff",)"
                      R"("h_tb":[0,0],"h_bt":[0,1],"v_tb":[0,1],"v_bt":[1,0]}}})"),
                  CacheError);
  CHECK_THROWS_AS(ScanCache::from_json(
                      R"({"version":1,"patch_size":4,"entries":{"x":{"mask_hash":"zz",)"
                      R"("h_tb":[0],"h_bt":[0],"v_tb":[0],"v_bt":[0]}}})"),
                  CacheError);
  CHECK_THROWS_AS(load_cache(temp_file("does_not_exist.json")), CacheError);
}

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64({}) == 0xcbf29ce484222325ULL);
  const std::vector<std::uint8_t> a{'a'};
  CHECK(fnv1a64(a) == 0xaf63dc4c8601ec8cULL);
  CHECK(hash_hex(0xafULL) == "00000000000000af");
  CHECK(parse_hash_hex("00000000000000af") == 0xafULL);
}

TEST_CASE("mask sources") {
  BinaryMask dot = BinaryMask::zeros(9, 9);
  dot.at(4, 4) = 1;
  const BinaryMask d = dilate(dot, 5);
  CHECK(d.count() == 25);
  CHECK(d.at(2, 2) == 1);
  CHECK(d.at(1, 4) == 0);
  BinaryMask corner = BinaryMask::zeros(9, 9);
  corner.at(0, 0) = 1;
  CHECK(dilate(corner, 5).count() == 9);
  CHECK_THROWS_AS(dilate(dot, 4), std::invalid_argument);

  std::vector<double> gray(16, 200.0);
  gray[5] = gray[6] = 30.0;
  const BinaryMask o = otsu_mask(4, 4, gray);
  CHECK(o.count() == 2);
  CHECK(o.at(1, 1) == 1);
  CHECK(o.at(1, 2) == 1);
  CHECK(otsu_mask(4, 4, std::vector<double>(16, 90.0)).count() == 0);
}
