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
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lidar/numerics/tensor.hpp"

// Mask-guided scan ordering of image patches.
//
// A binary crack mask is summarised by an exclusive integral image, every
// p x p patch is scored with four table lookups, and patches are split into a
// crack set (score > 0) and a background set. Four scan sequences follow:
//
//   h_tb = [C_h] + [B_h]          h_bt = [C_h]^rev + [B_h]^rev
//   v_tb = [C_v] + [B_v]          v_bt = [C_v]^rev + [B_v]^rev
//
// where h keeps row-major traversal order inside each set and v keeps
// column-major order. Patch ids are always row-major grid indices.
namespace lidar::edgss {

/// Raised for malformed or unreadable scan-cache files.
class CacheError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::string hash_hex(std::uint64_t hash);
std::uint64_t parse_hash_hex(const std::string& text);

struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> values;  // row-major, each 0 or 1
  std::string id;

  BinaryMask() = default;
  BinaryMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> values, std::string id = {});

  /// Rejects anything other than exact 0.0 / 1.0 entries.
  static BinaryMask from_doubles(std::size_t height, std::size_t width, std::span<const double> values,
                                 std::string id = {});
  static BinaryMask zeros(std::size_t height, std::size_t width);

  std::uint8_t at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
  std::uint8_t& at(std::size_t r, std::size_t c) { return values[r * width + c]; }
  std::size_t count() const;
  std::uint64_t hash() const { return fnv1a64(values); }
};

/// (H+1) x (W+1) table with I(x, y) = sum of M(i, j) for i < x, j < y.
class IntegralImage {
 public:
  explicit IntegralImage(const BinaryMask& mask);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::int64_t at(std::size_t x, std::size_t y) const { return table_[x * (width_ + 1) + y]; }
  /// Sum over rows [r0, r1) and columns [c0, c1).
  std::int64_t rect_sum(std::size_t r0, std::size_t c0, std::size_t r1, std::size_t c1) const;

 private:
  std::size_t height_, width_;
  std::vector<std::int64_t> table_;
};

/// Count of mask ones in the p x p patch whose top-left pixel is (i, j).
std::int64_t patch_score(const IntegralImage& integral, std::size_t i, std::size_t j, std::size_t p);

enum class Direction { kHorizontal, kVertical };
enum class Order { kTopBottom, kBottomTop };

const char* to_string(Direction d);
const char* to_string(Order s);

struct PatchGrid {
  std::size_t patch = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int64_t> scores;  // indexed by row-major patch id

  static PatchGrid build(const IntegralImage& integral, std::size_t patch);
  std::size_t count() const { return rows * cols; }
  /// Patch ids in the traversal order of `d`.
  std::vector<std::size_t> traversal(Direction d) const;
};

struct Partition {
  std::vector<std::size_t> crack;
  std::vector<std::size_t> background;
};

Partition partition_patches(const PatchGrid& grid, Direction d);

struct ScanSequence {
  Direction direction = Direction::kHorizontal;
  Order order = Order::kTopBottom;
  std::vector<std::size_t> indices;
  std::size_t crack_length = 0;  // |C_d|; 0 for baselines and cache-loaded bundles
};

struct ScanBundle {
  std::array<ScanSequence, 4> sequences;  // h_tb, h_bt, v_tb, v_bt
  std::uint64_t mask_hash = 0;
  std::size_t patch_size = 0;

  static constexpr std::size_t slot(Direction d, Order s) {
    return 2 * static_cast<std::size_t>(d) + static_cast<std::size_t>(s);
  }
  const ScanSequence& get(Direction d, Order s) const { return sequences[slot(d, s)]; }
  ScanSequence& get(Direction d, Order s) { return sequences[slot(d, s)]; }
  std::size_t length() const { return sequences[0].indices.size(); }

  /// Index-level equality (crack lengths are not persisted).
  friend bool operator==(const ScanBundle& a, const ScanBundle& b);
};

ScanBundle build_sequences(const PatchGrid& grid, std::uint64_t mask_hash = 0);
/// Mask -> integral image -> grid -> bundle.
ScanBundle scan_mask(const BinaryMask& mask, std::size_t patch);

enum class Baseline { kPara, kDiag, kParaSnake, kDiagSnake, kBiParaSnake, kBiDiagSnake };

const std::array<Baseline, 6>& all_baselines();
const char* to_string(Baseline kind);
/// Throws invalid_argument for unknown names.
Baseline parse_baseline(const std::string& name);

/// Mask-independent bundle: tb variants from the strategy, bt variants are
/// their reverses, and the vertical pair uses the transposed grid.
ScanBundle baseline_sequence(Baseline kind, std::size_t rows, std::size_t cols);

bool is_permutation(std::span<const std::size_t> indices, std::size_t n);
std::vector<std::size_t> invert_permutation(std::span<const std::size_t> perm);

/// tokens [B, L, D] -> tokens[:, order[k], :] at position k.
Tensor reorder(const Tensor& tokens, std::span<const std::size_t> order);
Tensor inverse_reorder(const Tensor& tokens, std::span<const std::size_t> order);

/// In-memory scan cache keyed by image id.
class ScanCache {
 public:
  enum class Status { kHit, kMissing, kHashMismatch };
  struct Lookup {
    const ScanBundle* bundle = nullptr;
    Status status = Status::kMissing;
    std::string message;  // set for kMissing and kHashMismatch
  };

  explicit ScanCache(std::size_t patch_size = 8) : patch_size_(patch_size) {}

  std::size_t patch_size() const { return patch_size_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::map<std::string, ScanBundle>& entries() const { return entries_; }

  void insert(const std::string& id, ScanBundle bundle);
  const ScanBundle* find(const std::string& id) const;
  /// Like find, but reports a mask-hash mismatch with both hashes.
  Lookup lookup(const std::string& id, std::uint64_t mask_hash) const;

  std::string to_json() const;
  static ScanCache from_json(const std::string& text);

  friend bool operator==(const ScanCache& a, const ScanCache& b) {
    return a.patch_size_ == b.patch_size_ && a.entries_ == b.entries_;
  }

 private:
  std::size_t patch_size_;
  std::map<std::string, ScanBundle> entries_;
};

void save_cache(const ScanCache& cache, const std::filesystem::path& path);
ScanCache load_cache(const std::filesystem::path& path);

// Desk-scale mask sources.

/// Binary dilation with a square structuring element of odd side `element`.
BinaryMask dilate(const BinaryMask& mask, std::size_t element = 5);
/// Otsu threshold over 8-bit intensities in [0, 255]; pixels at or below the
/// threshold (dark) are marked as crack.
BinaryMask otsu_mask(std::size_t height, std::size_t width, std::span<const double> gray, std::string id = {});
/// Threshold chosen by Otsu's method on a 256-bin histogram.
int otsu_threshold(std::span<const double> gray);

}  // namespace lidar::edgss
