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

#include <algorithm>
#include <chrono>
#include <random>
#include <sstream>

#include "lidar/pipeline.hpp"

namespace lidar::pipeline {

namespace {

using Clock = std::chrono::steady_clock;

bool bundle_valid(const edgss::ScanBundle& b, std::size_t n) {
  return std::all_of(b.sequences.begin(), b.sequences.end(),
                     [n](const edgss::ScanSequence& s) { return edgss::is_permutation(s.indices, n); });
}

template <typename Fn>
double median_seconds(std::size_t iterations, Fn&& fn) {
  std::vector<double> samples(iterations);
  for (auto& s : samples) {
    const auto t0 = Clock::now();
    fn();
    s = std::chrono::duration<double>(Clock::now() - t0).count();
  }
  std::nth_element(samples.begin(), samples.begin() + iterations / 2, samples.end());
  return samples[iterations / 2];
}

}  // namespace

std::vector<BenchRow> bench_scan(std::size_t grid, std::size_t patch, std::size_t iterations, std::uint64_t seed) {
  if (grid == 0 || patch == 0) throw std::invalid_argument("bench_scan: grid and patch must be positive");
  if (iterations < 100) throw std::invalid_argument("bench_scan: at least 100 iterations are required");
  const std::size_t n = grid * grid;
  std::vector<BenchRow> rows;
  volatile std::size_t sink = 0;

  for (edgss::Baseline kind : edgss::all_baselines()) {
    edgss::ScanBundle last;
    const double t = median_seconds(iterations, [&] {
      last = edgss::baseline_sequence(kind, grid, grid);
      sink = sink + last.sequences[0].indices.back();
    });
    rows.push_back({edgss::to_string(kind), t, bundle_valid(last, n)});
  }

  Rng rng(seed);
  std::bernoulli_distribution on(0.05);
  std::vector<std::uint8_t> pixels(n * patch * patch);
  for (auto& p : pixels) p = on(rng) ? 1 : 0;
  const edgss::BinaryMask mask(grid * patch, grid * patch, std::move(pixels), "bench");
  edgss::ScanBundle generated;
  const double t_gen = median_seconds(iterations, [&] {
    generated = edgss::scan_mask(mask, patch);
    sink = sink + generated.sequences[0].indices.back();
  });
  rows.push_back({"edg", t_gen, bundle_valid(generated, n)});

  edgss::ScanCache cache(patch);
  cache.insert(mask.id, generated);
  const std::uint64_t hash = mask.hash();
  const edgss::ScanBundle* found = nullptr;
  const double t_hit = median_seconds(iterations, [&] {
    found = cache.lookup(mask.id, hash).bundle;
    sink = sink + found->patch_size;
  });
  rows.push_back({"edg-cached", t_hit, found != nullptr && bundle_valid(*found, n)});
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "strategy,median_latency_s,validity\n";
  os.precision(3);
  for (const auto& r : rows) {
    os << r.strategy << ',' << std::scientific << r.median_seconds << ','
       << (r.permutation_ok ? "permutation: ok" : "permutation: FAILED") << '\n';
  }
  return os.str();
}

}  // namespace lidar::pipeline
