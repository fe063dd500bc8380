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
#include <memory>
#include <string>
#include <vector>

#include "lidar/numerics/ops.hpp"
#include "lidar/numerics/tensor.hpp"

// Reverse-mode differentiation over a dynamic tape of tensor-level
// primitives. Each primitive records its inputs and a vector-Jacobian
// product; `backward` replays the tape in reverse topological order.
namespace lidar::ad {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  /// Adds `g` into this node's gradient when it participates in backward.
  void accumulate(const Tensor& g);
};

/// Handle to a tape node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  /// Direct write access for optimizers and checkpoint loading.
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  bool requires_grad() const { return node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

inline Var parameter(Tensor value) { return Var(std::move(value), true); }
inline Var constant(Tensor value) { return Var(std::move(value), false); }

/// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every leaf
/// that requires them. `loss` must hold a single element.
void backward(const Var& loss);

// Elementwise arithmetic. Binary ops broadcast right-aligned dimensions of
// size one, numpy style.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var maximum(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

Var sum(const Var& a);
Var mean(const Var& a);

/// x: [..., in], weight: [out, in], bias: [out] or undefined.
Var linear(const Var& x, const Var& weight, const Var& bias = Var());

/// Same-padded stride-1 convolution; `bias` is [C_out] or undefined.
Var conv2d(const Var& x, const Var& kernel, numerics::ConvMode mode, const Var& bias = Var());
Var pool2d(const Var& x, numerics::PoolKind kind, numerics::PoolExtent extent);
Var global_avg_pool(const Var& x);

Var group_norm(const Var& x, std::size_t groups, const Var& gamma, const Var& beta, double eps = 1e-5);

struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
};
/// Batch statistics over (B, H, W) when `training`, running statistics otherwise.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats, bool training,
               double eps = 1e-5);

Var concat_channels(const std::vector<Var>& parts);
Var slice_channels(const Var& x, std::size_t start, std::size_t count);
Var reshape(const Var& x, Shape shape);
Var upsample_bilinear(const Var& x, std::size_t out_h, std::size_t out_w);

/// Packed half spectrum, see numerics::rfft2_packed.
Var rfft2(const Var& x);
Var irfft2(const Var& packed, std::size_t width);

/// [B, C, H, W] -> [B, L, C]. Tokens are ordered cell-major over a grid of
/// cell_h x cell_w cells (row-major over cells, raster inside each cell).
Var to_tokens(const Var& x, std::size_t cell_h, std::size_t cell_w);
Var from_tokens(const Var& tokens, std::size_t height, std::size_t width, std::size_t cell_h, std::size_t cell_w);

/// out[b, k, :] = x[b, order[b][k], :]. A single order is shared by all batch elements.
Var gather_tokens(const Var& x, const std::vector<std::vector<std::size_t>>& order);

/// [B, C, H, W] -> [B, L, C*p*p], non-overlapping p x p patches in raster order.
Var patchify(const Var& x, std::size_t patch);

/// Records a user-defined primitive. `vjp` receives the finished node and
/// must accumulate into node.inputs[i] for inputs that require gradients.
Var record(Tensor value, const char* op, std::vector<Var> inputs, std::function<void(Node&)> vjp);

}  // namespace lidar::ad
