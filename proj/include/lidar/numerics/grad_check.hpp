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

#include <functional>
#include <vector>

#include "lidar/numerics/autodiff.hpp"

namespace lidar::ad {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

using DifferentiableFn = std::function<Var(const std::vector<Var>&)>;

/// Compares reverse-mode gradients against central differences.
///
/// `fn` may return any shape; it is contracted with fixed pseudo-random
/// weights so every output element contributes. The error per element is
/// |analytic - fd| / (|analytic| + |fd| + 1e-12) and the maximum over all
/// elements of all inputs is reported. `eps` must lie in [1e-6, 1e-4].
/// Non-finite intermediates surface as NumericError naming the primitive.
GradCheckResult grad_check(const DifferentiableFn& fn, const std::vector<Tensor>& point, double eps = 1e-6,
                           std::uint64_t weight_seed = 7);

}  // namespace lidar::ad
