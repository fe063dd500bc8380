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

#include "lidar/pipeline.hpp"

namespace lidar::pipeline {

namespace {

void check_target(const ad::Var& pred, const Tensor& target, const char* what) {
  if (pred.shape() != target.shape()) {
    throw ShapeError(std::string(what) + ": prediction " + lidar::to_string(pred.shape()) + " vs target " +
                     lidar::to_string(target.shape()));
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (!(target[i] >= 0.0 && target[i] <= 1.0)) {
      throw std::invalid_argument(std::string(what) + ": target value " + std::to_string(target[i]) +
                                  " outside [0, 1] at index " + std::to_string(i));
    }
  }
}

}  // namespace

ad::Var dice_loss(const ad::Var& pred, const Tensor& target, double eps) {
  check_target(pred, target, "dice_loss");
  if (!(eps > 0.0)) throw std::invalid_argument("dice_loss: eps must be positive");
  const Tensor& p = pred.value();
  double inter = 0.0, sp = 0.0, st = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += p[i] * target[i];
    sp += p[i];
    st += target[i];
  }
  const double num = 2.0 * inter + eps, den = sp + st + eps;
  return ad::record(Tensor({1}, 1.0 - num / den), "dice_loss", {pred}, [target, num, den](ad::Node& n) {
    const double g = n.grad[0];
    Tensor d(target.shape());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = -g * (2.0 * target[i] * den - num) / (den * den);
    n.inputs[0]->accumulate(d);
  });
}

ad::Var bce_loss(const ad::Var& pred, const Tensor& target) {
  check_target(pred, target, "bce_loss");
  const Tensor& p = pred.value();
  const double M = static_cast<double>(p.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], kBceClamp, 1.0 - kBceClamp);
    acc -= target[i] * std::log(q) + (1.0 - target[i]) * std::log(1.0 - q);
  }
  return ad::record(Tensor({1}, acc / M), "bce_loss", {pred}, [target, M](ad::Node& n) {
    const Tensor& p = n.inputs[0]->value;
    const double g = n.grad[0];
    Tensor d(p.shape());
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (p[i] < kBceClamp || p[i] > 1.0 - kBceClamp) continue;
      d[i] = g * (-target[i] / p[i] + (1.0 - target[i]) / (1.0 - p[i])) / M;
    }
    n.inputs[0]->accumulate(d);
  });
}

LossTerms loss_terms(const ad::Var& pred, const Tensor& target, double dice_eps) {
  LossTerms t;
  t.dice = dice_loss(pred, target, dice_eps);
  t.bce = bce_loss(pred, target);
  t.total = ad::add(t.dice, t.bce);
  return t;
}

}  // namespace lidar::pipeline
