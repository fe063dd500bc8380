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

#include <string>
#include <utility>
#include <vector>

#include "lidar/numerics/autodiff.hpp"

namespace lidar {

namespace ldmk {
struct EmaState;
}

/// Named view over a module tree's learnable parameters and mutable state.
/// Pointers stay valid while the owning modules are alive and unmoved.
struct StateRegistry {
  std::vector<std::pair<std::string, ad::Var*>> params;
  std::vector<std::pair<std::string, ldmk::EmaState*>> emas;
  std::vector<std::pair<std::string, ad::BatchNormStats*>> norms;

  void add(const std::string& name, ad::Var& v) { params.emplace_back(name, &v); }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : params) n += v->value().size();
    return n;
  }
  std::vector<Tensor> values() const {
    std::vector<Tensor> out;
    for (const auto& [name, v] : params) out.push_back(v->value());
    return out;
  }
  /// Points every registered member at vars[offset + i], in registration order.
  void rebind(const std::vector<ad::Var>& vars, std::size_t offset = 0) const {
    for (std::size_t i = 0; i < params.size(); ++i) *params[i].second = vars.at(offset + i);
  }
};

inline std::string join_path(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

}  // namespace lidar
