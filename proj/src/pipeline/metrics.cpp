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
#include <sstream>

#include "lidar/pipeline.hpp"

namespace lidar::pipeline {

namespace {

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

Counts confusion(const Tensor& pred, const Tensor& target, double t) {
  Counts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] >= t, g = target[i] >= 0.5;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double f1_of(const Counts& c) {
  const std::size_t den = 2 * c.tp + c.fp + c.fn;
  return den == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(den);
}

double iou(std::size_t hit, std::size_t miss) {
  return hit + miss == 0 ? 1.0 : static_cast<double>(hit) / static_cast<double>(hit + miss);
}

}  // namespace

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int k = 1; k <= 99; ++k) t.push_back(k / 100.0);
  return t;
}

double f1_at(const Tensor& pred, const Tensor& target, double threshold) {
  if (pred.size() != target.size()) {
    throw ShapeError("f1_at: prediction " + lidar::to_string(pred.shape()) + " vs target " + lidar::to_string(target.shape()));
  }
  return f1_of(confusion(pred, target, threshold));
}

MetricReport compute_metrics(const std::vector<Tensor>& preds, const std::vector<Tensor>& targets,
                             const std::vector<double>& thresholds) {
  if (preds.empty()) throw std::invalid_argument("compute_metrics: no predictions");
  if (preds.size() != targets.size()) {
    throw std::invalid_argument("compute_metrics: " + std::to_string(preds.size()) + " predictions vs " +
                                std::to_string(targets.size()) + " targets");
  }
  if (thresholds.empty()) throw std::invalid_argument("compute_metrics: empty threshold grid");
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].shape() != targets[i].shape()) {
      throw ShapeError("compute_metrics: image " + std::to_string(i) + " prediction " + lidar::to_string(preds[i].shape()) +
                       " vs target " + lidar::to_string(targets[i].shape()));
    }
  }
  const std::size_t n = preds.size();
  MetricReport r;
  r.thresholds = thresholds;
  // f1[i][k]: image i at threshold k.
  std::vector<std::vector<double>> f1(n, std::vector<double>(thresholds.size()));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < thresholds.size(); ++k) f1[i][k] = f1_of(confusion(preds[i], targets[i], thresholds[k]));
  }
  r.ods = -1.0;
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += f1[i][k];
    mean /= static_cast<double>(n);
    if (mean > r.ods) {
      r.ods = mean;
      r.ods_threshold = thresholds[k];
    }
  }
  for (std::size_t i = 0; i < n; ++i) r.ois += *std::max_element(f1[i].begin(), f1[i].end());
  r.ois /= static_cast<double>(n);

  Counts pooled;
  for (std::size_t i = 0; i < n; ++i) {
    const Counts c = confusion(preds[i], targets[i], 0.5);
    r.f1 += f1_of(c);
    pooled.tp += c.tp;
    pooled.fp += c.fp;
    pooled.fn += c.fn;
    pooled.tn += c.tn;
  }
  r.f1 /= static_cast<double>(n);
  r.miou = 0.5 * (iou(pooled.tp, pooled.fp + pooled.fn) + iou(pooled.tn, pooled.fp + pooled.fn));
  return r;
}

std::string metrics_csv(const MetricReport& r) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << "metric,value\nODS," << r.ods << "\nOIS," << r.ois << "\nF1," << r.f1 << "\nmIoU," << r.miou
     << '\n';
  return os.str();
}

}  // namespace lidar::pipeline
