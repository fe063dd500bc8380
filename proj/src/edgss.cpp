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

#include "lidar/edgss.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace lidar::edgss {

namespace {

constexpr int kCacheVersion = 1;
constexpr std::array<const char*, 4> kSlotNames{"h_tb", "h_bt", "v_tb", "v_bt"};

std::string grid_text(std::size_t rows, std::size_t cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

std::uint64_t parse_hash_hex(const std::string& text) {
  if (text.size() != 16 || text.find_first_not_of("0123456789abcdef") != std::string::npos) {
    throw CacheError("mask_hash '" + text + "' is not 16 lowercase hex digits");
  }
  return std::stoull(text, nullptr, 16);
}

BinaryMask::BinaryMask(std::size_t h, std::size_t w, std::vector<std::uint8_t> v, std::string ident)
    : height(h), width(w), values(std::move(v)), id(std::move(ident)) {
  if (values.size() != h * w) {
    throw ShapeError("BinaryMask: " + std::to_string(values.size()) + " values for a " + grid_text(h, w) + " mask");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] > 1) {
      throw std::invalid_argument("BinaryMask: value " + std::to_string(values[i]) + " at index " +
                                  std::to_string(i) + " is not binary");
    }
  }
}

BinaryMask BinaryMask::from_doubles(std::size_t h, std::size_t w, std::span<const double> v, std::string ident) {
  std::vector<std::uint8_t> bits(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] != 0.0 && v[i] != 1.0) {
      throw std::invalid_argument("BinaryMask: value " + std::to_string(v[i]) + " at index " + std::to_string(i) +
                                  " is not binary");
    }
    bits[i] = v[i] == 1.0 ? 1 : 0;
  }
  return BinaryMask(h, w, std::move(bits), std::move(ident));
}

BinaryMask BinaryMask::zeros(std::size_t h, std::size_t w) {
  return BinaryMask(h, w, std::vector<std::uint8_t>(h * w, 0));
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(values.begin(), values.end(), std::uint8_t{1}));
}

IntegralImage::IntegralImage(const BinaryMask& mask)
    : height_(mask.height), width_(mask.width), table_((mask.height + 1) * (mask.width + 1), 0) {
  const std::size_t stride = width_ + 1;
  for (std::size_t x = 1; x <= height_; ++x) {
    std::int64_t row = 0;
    for (std::size_t y = 1; y <= width_; ++y) {
      const std::uint8_t m = mask.values[(x - 1) * width_ + (y - 1)];
      if (m > 1) throw std::invalid_argument("integral_image: mask value at (" + std::to_string(x - 1) + ", " +
                                             std::to_string(y - 1) + ") is not binary");
      row += m;
      table_[x * stride + y] = table_[(x - 1) * stride + y] + row;
    }
  }
}

std::int64_t IntegralImage::rect_sum(std::size_t r0, std::size_t c0, std::size_t r1, std::size_t c1) const {
  if (r0 > r1 || c0 > c1 || r1 > height_ || c1 > width_) {
    throw std::out_of_range("rect_sum: rows [" + std::to_string(r0) + ", " + std::to_string(r1) + ") cols [" +
                            std::to_string(c0) + ", " + std::to_string(c1) + ") outside " +
                            grid_text(height_, width_));
  }
  return at(r1, c1) - at(r1, c0) - at(r0, c1) + at(r0, c0);
}

std::int64_t patch_score(const IntegralImage& integral, std::size_t i, std::size_t j, std::size_t p) {
  if (p == 0 || i + p > integral.height() || j + p > integral.width()) {
    throw std::out_of_range("patch_score: " + std::to_string(p) + "x" + std::to_string(p) + " patch at (" +
                            std::to_string(i) + ", " + std::to_string(j) + ") leaves the " +
                            grid_text(integral.height(), integral.width()) + " image");
  }
  return integral.at(i + p, j + p) - integral.at(i + p, j) - integral.at(i, j + p) + integral.at(i, j);
}

const char* to_string(Direction d) { return d == Direction::kHorizontal ? "h" : "v"; }
const char* to_string(Order s) { return s == Order::kTopBottom ? "tb" : "bt"; }

PatchGrid PatchGrid::build(const IntegralImage& integral, std::size_t patch) {
  if (patch == 0 || integral.height() % patch != 0 || integral.width() % patch != 0) {
    throw std::invalid_argument("PatchGrid: patch size " + std::to_string(patch) + " does not divide " +
                                grid_text(integral.height(), integral.width()));
  }
  PatchGrid g;
  g.patch = patch;
  g.rows = integral.height() / patch;
  g.cols = integral.width() / patch;
  g.scores.resize(g.count());
  for (std::size_t r = 0; r < g.rows; ++r) {
    for (std::size_t c = 0; c < g.cols; ++c) g.scores[r * g.cols + c] = patch_score(integral, r * patch, c * patch, patch);
  }
  return g;
}

std::vector<std::size_t> PatchGrid::traversal(Direction d) const {
  std::vector<std::size_t> out;
  out.reserve(count());
  if (d == Direction::kHorizontal) {
    for (std::size_t k = 0; k < count(); ++k) out.push_back(k);
  } else {
    for (std::size_t c = 0; c < cols; ++c) {
      for (std::size_t r = 0; r < rows; ++r) out.push_back(r * cols + c);
    }
  }
  return out;
}

Partition partition_patches(const PatchGrid& grid, Direction d) {
  Partition part;
  for (std::size_t k : grid.traversal(d)) (grid.scores[k] > 0 ? part.crack : part.background).push_back(k);
  return part;
}

bool operator==(const ScanBundle& a, const ScanBundle& b) {
  if (a.mask_hash != b.mask_hash || a.patch_size != b.patch_size) return false;
  for (std::size_t i = 0; i < 4; ++i) {
    if (a.sequences[i].indices != b.sequences[i].indices) return false;
  }
  return true;
}

ScanBundle build_sequences(const PatchGrid& grid, std::uint64_t mask_hash) {
  ScanBundle bundle;
  bundle.mask_hash = mask_hash;
  bundle.patch_size = grid.patch;
  for (Direction d : {Direction::kHorizontal, Direction::kVertical}) {
    const Partition part = partition_patches(grid, d);
    ScanSequence& tb = bundle.get(d, Order::kTopBottom);
    ScanSequence& bt = bundle.get(d, Order::kBottomTop);
    tb = {d, Order::kTopBottom, part.crack, part.crack.size()};
    tb.indices.insert(tb.indices.end(), part.background.begin(), part.background.end());
    bt = {d, Order::kBottomTop, {part.crack.rbegin(), part.crack.rend()}, part.crack.size()};
    bt.indices.insert(bt.indices.end(), part.background.rbegin(), part.background.rend());
  }
  return bundle;
}

ScanBundle scan_mask(const BinaryMask& mask, std::size_t patch) {
  return build_sequences(PatchGrid::build(IntegralImage(mask), patch), mask.hash());
}

const std::array<Baseline, 6>& all_baselines() {
  static const std::array<Baseline, 6> kinds{Baseline::kPara,      Baseline::kDiag,        Baseline::kParaSnake,
                                             Baseline::kDiagSnake, Baseline::kBiParaSnake, Baseline::kBiDiagSnake};
  return kinds;
}

const char* to_string(Baseline kind) {
  switch (kind) {
    case Baseline::kPara: return "Para";
    case Baseline::kDiag: return "Diag";
    case Baseline::kParaSnake: return "ParaSnake";
    case Baseline::kDiagSnake: return "DiagSnake";
    case Baseline::kBiParaSnake: return "biParaSnake";
    case Baseline::kBiDiagSnake: return "biDiagSnake";
  }
  throw std::invalid_argument("unknown baseline");
}

Baseline parse_baseline(const std::string& name) {
  for (Baseline k : all_baselines()) {
    if (name == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown scan strategy '" + name +
                              "' (expected Para, Diag, ParaSnake, DiagSnake, biParaSnake or biDiagSnake)");
}

namespace {

// Visits grid cells of a rows x cols grid and emits ids in that grid's own
// row-major numbering.
std::vector<std::size_t> raster_cells(std::size_t rows, std::size_t cols, bool snake) {
  std::vector<std::size_t> out;
  out.reserve(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const bool flip = snake && (r % 2 == 1);
    for (std::size_t k = 0; k < cols; ++k) out.push_back(r * cols + (flip ? cols - 1 - k : k));
  }
  return out;
}

// Anti-diagonals s = r + c in increasing s; rows ascend along a diagonal
// unless `snake` flips every odd diagonal.
std::vector<std::size_t> diagonal_cells(std::size_t rows, std::size_t cols, bool snake) {
  std::vector<std::size_t> out;
  out.reserve(rows * cols);
  std::vector<std::size_t> diag;
  for (std::size_t s = 0; s + 1 < rows + cols; ++s) {
    diag.clear();
    const std::size_t r_lo = s >= cols ? s - cols + 1 : 0;
    const std::size_t r_hi = std::min(s, rows - 1);
    for (std::size_t r = r_lo; r <= r_hi; ++r) diag.push_back(r * cols + (s - r));
    if (snake && s % 2 == 1) std::reverse(diag.begin(), diag.end());
    out.insert(out.end(), diag.begin(), diag.end());
  }
  return out;
}

// [s0, s_{n-1}, s1, s_{n-2}, ...]: walks the path from both ends at once.
std::vector<std::size_t> interleave_ends(const std::vector<std::size_t>& seq) {
  std::vector<std::size_t> out;
  out.reserve(seq.size());
  std::size_t lo = 0, hi = seq.size();
  while (lo < hi) {
    out.push_back(seq[lo++]);
    if (lo < hi) out.push_back(seq[--hi]);
  }
  return out;
}

std::vector<std::size_t> baseline_cells(Baseline kind, std::size_t rows, std::size_t cols) {
  switch (kind) {
    case Baseline::kPara: return raster_cells(rows, cols, false);
    case Baseline::kDiag: return diagonal_cells(rows, cols, false);
    case Baseline::kParaSnake: return raster_cells(rows, cols, true);
    case Baseline::kDiagSnake: return diagonal_cells(rows, cols, true);
    case Baseline::kBiParaSnake: return interleave_ends(raster_cells(rows, cols, true));
    case Baseline::kBiDiagSnake: return interleave_ends(diagonal_cells(rows, cols, true));
  }
  throw std::invalid_argument("baseline_sequence: unknown strategy");
}

}  // namespace

ScanBundle baseline_sequence(Baseline kind, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("baseline_sequence: empty grid " + grid_text(rows, cols));
  ScanBundle bundle;
  std::vector<std::size_t> h = baseline_cells(kind, rows, cols);
  // Run the same strategy on the transposed grid and map back to row-major ids.
  std::vector<std::size_t> v = baseline_cells(kind, cols, rows);
  for (std::size_t& id : v) id = (id % rows) * cols + id / rows;
  for (Direction d : {Direction::kHorizontal, Direction::kVertical}) {
    const auto& seq = d == Direction::kHorizontal ? h : v;
    bundle.get(d, Order::kTopBottom) = {d, Order::kTopBottom, seq, 0};
    bundle.get(d, Order::kBottomTop) = {d, Order::kBottomTop, {seq.rbegin(), seq.rend()}, 0};
  }
  return bundle;
}

bool is_permutation(std::span<const std::size_t> indices, std::size_t n) {
  if (indices.size() != n) return false;
  std::vector<bool> seen(n, false);
  for (std::size_t i : indices) {
    if (i >= n || seen[i]) return false;
    seen[i] = true;
  }
  return true;
}

std::vector<std::size_t> invert_permutation(std::span<const std::size_t> perm) {
  if (!is_permutation(perm, perm.size())) throw std::invalid_argument("invert_permutation: not a permutation");
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t k = 0; k < perm.size(); ++k) inv[perm[k]] = k;
  return inv;
}

namespace {

void require_token_perm(const Tensor& tokens, std::span<const std::size_t> order, const char* what) {
  if (tokens.rank() != 3) {
    throw ShapeError(std::string(what) + ": expected [B, L, D] tokens, got " + lidar::to_string(tokens.shape()));
  }
  if (order.size() != tokens.dim(1)) {
    throw ShapeError(std::string(what) + ": sequence of length " + std::to_string(order.size()) + " for tokens " +
                     lidar::to_string(tokens.shape()));
  }
  if (!is_permutation(order, order.size())) {
    throw std::invalid_argument(std::string(what) + ": sequence is not a permutation");
  }
}

Tensor gather(const Tensor& tokens, std::span<const std::size_t> order) {
  const std::size_t B = tokens.dim(0), L = tokens.dim(1), D = tokens.dim(2);
  Tensor out(tokens.shape());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t k = 0; k < L; ++k) {
      std::copy_n(&tokens[(b * L + order[k]) * D], D, &out[(b * L + k) * D]);
    }
  }
  return out;
}

}  // namespace

Tensor reorder(const Tensor& tokens, std::span<const std::size_t> order) {
  require_token_perm(tokens, order, "reorder");
  return gather(tokens, order);
}

Tensor inverse_reorder(const Tensor& tokens, std::span<const std::size_t> order) {
  require_token_perm(tokens, order, "inverse_reorder");
  return gather(tokens, invert_permutation(order));
}

void ScanCache::insert(const std::string& id, ScanBundle bundle) {
  if (bundle.patch_size != patch_size_) {
    throw std::invalid_argument("ScanCache: bundle for '" + id + "' has patch size " +
                                std::to_string(bundle.patch_size) + ", cache uses " + std::to_string(patch_size_));
  }
  entries_.insert_or_assign(id, std::move(bundle));
}

const ScanBundle* ScanCache::find(const std::string& id) const {
  const auto it = entries_.find(id);
  return it == entries_.end() ? nullptr : &it->second;
}

ScanCache::Lookup ScanCache::lookup(const std::string& id, std::uint64_t mask_hash) const {
  const ScanBundle* b = find(id);
  if (!b) return {nullptr, Status::kMissing, "scan cache has no entry for '" + id + "'"};
  if (b->mask_hash != mask_hash) {
    return {b, Status::kHashMismatch,
            "scan cache entry '" + id + "' was built from mask " + hash_hex(b->mask_hash) +
                " but the current mask hashes to " + hash_hex(mask_hash)};
  }
  return {b, Status::kHit, {}};
}

std::string ScanCache::to_json() const {
  nlohmann::ordered_json entries = nlohmann::ordered_json::object();
  for (const auto& [id, bundle] : entries_) {
    nlohmann::ordered_json e;
    e["mask_hash"] = hash_hex(bundle.mask_hash);
    for (std::size_t i = 0; i < 4; ++i) e[kSlotNames[i]] = bundle.sequences[i].indices;
    entries[id] = std::move(e);
  }
  nlohmann::ordered_json doc;
  doc["version"] = kCacheVersion;
  doc["patch_size"] = patch_size_;
  doc["entries"] = std::move(entries);
  return doc.dump() + "\n";
}

ScanCache ScanCache::from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw CacheError(std::string("scan cache is not valid JSON: ") + e.what());
  }
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw CacheError("scan cache: " + what);
  };
  require(doc.is_object(), "top level must be an object");
  require(doc.contains("version") && doc["version"].is_number_integer(), "missing integer 'version'");
  require(doc["version"].get<int>() == kCacheVersion,
          "unsupported version " + doc["version"].dump() + " (expected " + std::to_string(kCacheVersion) + ")");
  require(doc.contains("patch_size") && doc["patch_size"].is_number_unsigned() && doc["patch_size"].get<std::size_t>() > 0,
          "missing positive integer 'patch_size'");
  require(doc.contains("entries") && doc["entries"].is_object(), "missing object 'entries'");

  ScanCache cache(doc["patch_size"].get<std::size_t>());
  for (const auto& [id, e] : doc["entries"].items()) {
    require(e.is_object(), "entry '" + id + "' is not an object");
    require(e.contains("mask_hash") && e["mask_hash"].is_string(), "entry '" + id + "' lacks a string mask_hash");
    ScanBundle bundle;
    bundle.patch_size = cache.patch_size_;
    bundle.mask_hash = parse_hash_hex(e["mask_hash"].get<std::string>());
    for (std::size_t i = 0; i < 4; ++i) {
      const char* key = kSlotNames[i];
      require(e.contains(key) && e[key].is_array(), "entry '" + id + "' lacks array '" + key + "'");
      auto& seq = bundle.sequences[i];
      seq.direction = i < 2 ? Direction::kHorizontal : Direction::kVertical;
      seq.order = i % 2 == 0 ? Order::kTopBottom : Order::kBottomTop;
      for (const auto& v : e[key]) {
        require(v.is_number_unsigned(), "entry '" + id + "' '" + key + "' holds a non-index value " + v.dump());
        seq.indices.push_back(v.get<std::size_t>());
      }
    }
    const std::size_t n = bundle.sequences[0].indices.size();
    for (std::size_t i = 0; i < 4; ++i) {
      require(is_permutation(bundle.sequences[i].indices, n),
              "entry '" + id + "' '" + kSlotNames[i] + "' is not a permutation of 0.." + std::to_string(n) + "-1");
    }
    cache.entries_.emplace(id, std::move(bundle));
  }
  return cache;
}

void save_cache(const ScanCache& cache, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CacheError("cannot open '" + path.string() + "' for writing");
  out << cache.to_json();
  if (!out) throw CacheError("failed writing '" + path.string() + "'");
}

ScanCache load_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CacheError("cannot open scan cache '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return ScanCache::from_json(buf.str());
  } catch (const CacheError& e) {
    throw CacheError(path.string() + ": " + e.what());
  }
}

BinaryMask dilate(const BinaryMask& mask, std::size_t element) {
  if (element == 0 || element % 2 == 0) {
    throw std::invalid_argument("dilate: structuring element size " + std::to_string(element) + " must be odd");
  }
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(element / 2);
  const auto H = static_cast<std::ptrdiff_t>(mask.height), W = static_cast<std::ptrdiff_t>(mask.width);
  BinaryMask out = BinaryMask::zeros(mask.height, mask.width);
  out.id = mask.id;
  for (std::ptrdiff_t y = 0; y < H; ++y) {
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      if (!mask.values[y * W + x]) continue;
      for (std::ptrdiff_t dy = std::max<std::ptrdiff_t>(0, y - r); dy <= std::min(H - 1, y + r); ++dy) {
        for (std::ptrdiff_t dx = std::max<std::ptrdiff_t>(0, x - r); dx <= std::min(W - 1, x + r); ++dx) {
          out.values[dy * W + dx] = 1;
        }
      }
    }
  }
  return out;
}

int otsu_threshold(std::span<const double> gray) {
  if (gray.empty()) throw std::invalid_argument("otsu_threshold: empty image");
  std::array<double, 256> hist{};
  for (double g : gray) hist[static_cast<std::size_t>(std::clamp(std::lround(g), 0L, 255L))] += 1.0;
  const double total = static_cast<double>(gray.size());
  double sum_all = 0.0;
  for (int t = 0; t < 256; ++t) sum_all += t * hist[t];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_t = 0;
  for (int t = 0; t < 256; ++t) {
    w0 += hist[t];
    sum0 += t * hist[t];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_t = t;
    }
  }
  return best_t;
}

BinaryMask otsu_mask(std::size_t height, std::size_t width, std::span<const double> gray, std::string id) {
  if (gray.size() != height * width) {
    throw ShapeError("otsu_mask: " + std::to_string(gray.size()) + " pixels for a " + grid_text(height, width) + " image");
  }
  const int t = otsu_threshold(gray);
  std::vector<std::uint8_t> bits(gray.size());
  // A uniform image has no second class; nothing is marked.
  const bool uniform = std::all_of(gray.begin(), gray.end(), [&](double g) { return g == gray[0]; });
  for (std::size_t i = 0; i < gray.size(); ++i) bits[i] = !uniform && std::lround(gray[i]) <= t ? 1 : 0;
  return BinaryMask(height, width, std::move(bits), std::move(id));
}

}  // namespace lidar::edgss
