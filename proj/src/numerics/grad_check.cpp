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

#include "lidar/numerics/grad_check.hpp"

#include <cmath>

namespace lidar::ad {
namespace {

double contract(const Tensor& out, const Tensor& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * weights[i];
  return s;
}

}  // namespace

GradCheckResult grad_check(const DifferentiableFn& fn, const std::vector<Tensor>& point, double eps,
                           std::uint64_t weight_seed) {
  if (!(eps >= 1e-6 && eps <= 1e-4)) throw std::invalid_argument("grad_check: eps must lie in [1e-6, 1e-4]");

  std::vector<Var> inputs;
  for (const auto& t : point) inputs.push_back(parameter(t));
  const Var out = fn(inputs);
  Rng rng(weight_seed);
  const Var weights = constant(Tensor::uniform(out.shape(), 0.5, 1.5, rng));
  backward(sum(mul(out, weights)));

  auto evaluate = [&](std::vector<Tensor> values) {
    std::vector<Var> vars;
    for (auto& v : values) vars.push_back(constant(std::move(v)));
    return contract(fn(vars).value(), weights.value());
  };

  GradCheckResult result;
  for (std::size_t k = 0; k < point.size(); ++k) {
    const Tensor& analytic = inputs[k].grad();
    for (std::size_t i = 0; i < point[k].size(); ++i) {
      std::vector<Tensor> plus = point, minus = point;
      plus[k][i] += eps;
      minus[k][i] -= eps;
      const double fd = (evaluate(std::move(plus)) - evaluate(std::move(minus))) / (2.0 * eps);
      const double an = analytic.empty() ? 0.0 : analytic[i];
      const double err = std::abs(an - fd) / (std::abs(an) + std::abs(fd) + 1e-12);
      if (err > result.max_rel_error) result = {err, k, i, an, fd};
    }
  }
  return result;
}

}  // namespace lidar::ad
