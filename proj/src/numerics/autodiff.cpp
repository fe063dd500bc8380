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

#include "lidar/numerics/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace lidar::ad {

void Node::accumulate(const Tensor& g) {
  if (!requires_grad) return;
  if (grad.empty() && !g.empty()) {
    grad = g;
  } else {
    grad += g;
  }
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::zero_grad() { node_->grad = Tensor(); }

Var record(Tensor value, const char* op, std::vector<Var> inputs, std::function<void(Node&)> vjp) {
  if (!value.all_finite()) throw NumericError(std::string(op) + ": produced a non-finite value");
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  for (const auto& in : inputs) {
    if (in.defined() && in.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(vjp);
  }
  return Var(std::move(node));
}

void backward(const Var& loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be a single element, got " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->accumulate(Tensor(loss.shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

namespace {

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;
  bool same = false;
};

std::vector<std::size_t> aligned_strides(const Shape& s, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  const std::size_t offset = out.size() - s.size();
  for (std::size_t i = s.size(); i-- > 0;) {
    strides[i + offset] = s[i] == 1 ? 0 : stride;
    stride *= s[i];
  }
  return strides;
}

Broadcast make_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
    bc.same = true;
    return bc;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  bc.out.assign(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
    bc.out[i] = std::max(da, db);
  }
  bc.stride_a = aligned_strides(a, bc.out);
  bc.stride_b = aligned_strides(b, bc.out);
  return bc;
}

template <class F>
void broadcast_loop(const Broadcast& bc, F&& f) {
  const std::size_t n = shape_numel(bc.out);
  if (bc.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t rank = bc.out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += bc.stride_a[d];
      ib += bc.stride_b[d];
      if (idx[d] < bc.out[d]) break;
      ia -= bc.stride_a[d] * idx[d];
      ib -= bc.stride_b[d] * idx[d];
      idx[d] = 0;
    }
  }
}

enum class Binary { kAdd, kSub, kMul, kMax };

Var binary(const Var& a, const Var& b, Binary kind, const char* op) {
  const Broadcast bc = make_broadcast(a.shape(), b.shape(), op);
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  Tensor out(bc.out);
  broadcast_loop(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    switch (kind) {
      case Binary::kAdd: out[i] = va[ia] + vb[ib]; break;
      case Binary::kSub: out[i] = va[ia] - vb[ib]; break;
      case Binary::kMul: out[i] = va[ia] * vb[ib]; break;
      case Binary::kMax: out[i] = std::max(va[ia], vb[ib]); break;
    }
  });
  return record(std::move(out), op, {a, b}, [bc, kind](Node& n) {
    Node& na = *n.inputs[0];
    Node& nb = *n.inputs[1];
    Tensor ga(na.value.shape()), gb(nb.value.shape());
    broadcast_loop(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      const double g = n.grad[i];
      switch (kind) {
        case Binary::kAdd: ga[ia] += g; gb[ib] += g; break;
        case Binary::kSub: ga[ia] += g; gb[ib] -= g; break;
        case Binary::kMul:
          ga[ia] += g * nb.value[ib];
          gb[ib] += g * na.value[ia];
          break;
        case Binary::kMax:
          // Ties route to the first operand.
          if (na.value[ia] >= nb.value[ib]) {
            ga[ia] += g;
          } else {
            gb[ib] += g;
          }
          break;
      }
    });
    na.accumulate(ga);
    nb.accumulate(gb);
  });
}

template <class Fwd, class Deriv>
Var unary(const Var& a, const char* op, Fwd fwd, Deriv deriv) {
  Tensor out(a.shape());
  const Tensor& va = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(va[i]);
  return record(std::move(out), op, {a}, [deriv](Node& n) {
    Node& in = *n.inputs[0];
    Tensor g(in.value.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] * deriv(in.value[i], n.value[i]);
    in.accumulate(g);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) { return binary(a, b, Binary::kAdd, "add"); }
Var sub(const Var& a, const Var& b) { return binary(a, b, Binary::kSub, "sub"); }
Var mul(const Var& a, const Var& b) { return binary(a, b, Binary::kMul, "mul"); }
Var maximum(const Var& a, const Var& b) { return binary(a, b, Binary::kMax, "maximum"); }

Var scale(const Var& a, double s) {
  return unary(a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var relu(const Var& a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& a) {
  return unary(
      a, "sigmoid",
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var exp(const Var& a) {
  return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var sum(const Var& a) {
  return record(Tensor({1}, a.value().sum()), "sum", {a}, [](Node& n) {
    Node& in = *n.inputs[0];
    in.accumulate(Tensor(in.value.shape(), n.grad[0]));
  });
}

Var mean(const Var& a) {
  const double count = static_cast<double>(a.value().size());
  return record(Tensor({1}, a.value().sum() / count), "mean", {a}, [count](Node& n) {
    Node& in = *n.inputs[0];
    in.accumulate(Tensor(in.value.shape(), n.grad[0] / count));
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Shape& xs = x.shape();
  if (weight.value().rank() != 2 || xs.empty() || xs.back() != weight.dim(1)) {
    throw ShapeError("linear: input " + to_string(xs) + " incompatible with weight " + to_string(weight.shape()));
  }
  const std::size_t in = weight.dim(1), out_dim = weight.dim(0);
  if (bias.defined() && bias.shape() != Shape{out_dim}) {
    throw ShapeError("linear: bias " + to_string(bias.shape()) + " does not match weight " +
                     to_string(weight.shape()));
  }
  const std::size_t rows = x.value().size() / in;
  Shape os = xs;
  os.back() = out_dim;
  Tensor out(os);
  const Tensor& W = weight.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = &x.value()[r * in];
    for (std::size_t o = 0; o < out_dim; ++o) {
      double acc = bias.defined() ? bias.value()[o] : 0.0;
      const double* w = &W[o * in];
      for (std::size_t i = 0; i < in; ++i) acc += w[i] * src[i];
      out[r * out_dim + o] = acc;
    }
  }
  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return record(std::move(out), "linear", std::move(inputs), [rows, in, out_dim](Node& n) {
    Node& nx = *n.inputs[0];
    Node& nw = *n.inputs[1];
    if (nx.requires_grad) {
      Tensor gx(nx.value.shape());
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < out_dim; ++o) {
          const double g = n.grad[r * out_dim + o];
          const double* w = &nw.value[o * in];
          for (std::size_t i = 0; i < in; ++i) gx[r * in + i] += g * w[i];
        }
      }
      nx.accumulate(gx);
    }
    if (nw.requires_grad) {
      Tensor gw(nw.value.shape());
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < out_dim; ++o) {
          const double g = n.grad[r * out_dim + o];
          const double* src = &nx.value[r * in];
          for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += g * src[i];
        }
      }
      nw.accumulate(gw);
    }
    if (n.inputs.size() > 2 && n.inputs[2]->requires_grad) {
      Tensor gb({out_dim});
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < out_dim; ++o) gb[o] += n.grad[r * out_dim + o];
      }
      n.inputs[2]->accumulate(gb);
    }
  });
}

Var conv2d(const Var& x, const Var& kernel, numerics::ConvMode mode, const Var& bias) {
  Tensor out = numerics::conv2d(x.value(), kernel.value(), mode);
  const std::size_t Co = out.dim(1), plane = out.dim(2) * out.dim(3);
  if (bias.defined()) {
    if (bias.shape() != Shape{Co}) {
      throw ShapeError("conv2d: bias " + to_string(bias.shape()) + " does not match " + std::to_string(Co) +
                       " output channels");
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias.value()[(i / plane) % Co];
  }
  std::vector<Var> inputs{x, kernel};
  if (bias.defined()) inputs.push_back(bias);
  return record(std::move(out), "conv2d", std::move(inputs), [mode, Co, plane](Node& n) {
    Node& nx = *n.inputs[0];
    Node& nk = *n.inputs[1];
    if (nx.requires_grad) nx.accumulate(numerics::conv2d_grad_input(n.grad, nk.value, mode, nx.value.shape()));
    if (nk.requires_grad) nk.accumulate(numerics::conv2d_grad_kernel(n.grad, nx.value, mode, nk.value.shape()));
    if (n.inputs.size() > 2 && n.inputs[2]->requires_grad) {
      Tensor gb({Co});
      for (std::size_t i = 0; i < n.grad.size(); ++i) gb[(i / plane) % Co] += n.grad[i];
      n.inputs[2]->accumulate(gb);
    }
  });
}

Var pool2d(const Var& x, numerics::PoolKind kind, numerics::PoolExtent extent) {
  return record(numerics::pool2d(x.value(), kind, extent), "pool2d", {x}, [kind, extent](Node& n) {
    Node& in = *n.inputs[0];
    in.accumulate(numerics::pool2d_grad(n.grad, in.value, kind, extent));
  });
}

Var global_avg_pool(const Var& x) {
  return pool2d(x, numerics::PoolKind::kAvg, numerics::PoolExtent::Global());
}

namespace {

// Normalizes `count` interleaved groups; `index(g, j)` maps the j-th member
// of group g to a flat offset and `channel(offset)` to its affine channel.
struct NormPlan {
  std::size_t groups = 0;
  std::size_t members = 0;
  std::vector<std::size_t> offsets;  // groups * members
};

struct NormResult {
  Tensor out;
  Tensor xhat;
  std::vector<double> inv_std;
};

NormResult normalize(const Tensor& x, const NormPlan& plan, const Tensor& gamma, const Tensor& beta,
                     std::size_t plane, std::size_t channels, double eps, std::vector<double>* means,
                     std::vector<double>* vars) {
  NormResult r{Tensor(x.shape()), Tensor(x.shape()), std::vector<double>(plan.groups)};
  for (std::size_t g = 0; g < plan.groups; ++g) {
    const std::size_t* off = &plan.offsets[g * plan.members];
    double mu = 0.0;
    for (std::size_t j = 0; j < plan.members; ++j) mu += x[off[j]];
    mu /= static_cast<double>(plan.members);
    double var = 0.0;
    for (std::size_t j = 0; j < plan.members; ++j) var += (x[off[j]] - mu) * (x[off[j]] - mu);
    var /= static_cast<double>(plan.members);
    const double inv = 1.0 / std::sqrt(var + eps);
    r.inv_std[g] = inv;
    if (means) (*means)[g] = mu;
    if (vars) (*vars)[g] = var;
    for (std::size_t j = 0; j < plan.members; ++j) {
      const std::size_t o = off[j];
      const std::size_t c = (o / plane) % channels;
      r.xhat[o] = (x[o] - mu) * inv;
      r.out[o] = r.xhat[o] * gamma[c] + beta[c];
    }
  }
  return r;
}

void normalize_backward(Node& n, const NormPlan& plan, const Tensor& xhat, const std::vector<double>& inv_std,
                        std::size_t plane, std::size_t channels) {
  Node& nx = *n.inputs[0];
  Node& ng = *n.inputs[1];
  Node& nb = *n.inputs[2];
  Tensor gx(nx.value.shape()), gg(ng.value.shape()), gb(nb.value.shape());
  const double m = static_cast<double>(plan.members);
  for (std::size_t g = 0; g < plan.groups; ++g) {
    const std::size_t* off = &plan.offsets[g * plan.members];
    double mean_d = 0.0, mean_dx = 0.0;
    for (std::size_t j = 0; j < plan.members; ++j) {
      const std::size_t o = off[j];
      const std::size_t c = (o / plane) % channels;
      const double d = n.grad[o] * ng.value[c];
      mean_d += d;
      mean_dx += d * xhat[o];
      gg[c] += n.grad[o] * xhat[o];
      gb[c] += n.grad[o];
    }
    mean_d /= m;
    mean_dx /= m;
    for (std::size_t j = 0; j < plan.members; ++j) {
      const std::size_t o = off[j];
      const std::size_t c = (o / plane) % channels;
      gx[o] = inv_std[g] * (n.grad[o] * ng.value[c] - mean_d - xhat[o] * mean_dx);
    }
  }
  nx.accumulate(gx);
  ng.accumulate(gg);
  nb.accumulate(gb);
}

void check_affine(const Var& gamma, const Var& beta, std::size_t C, const char* op) {
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) {
    throw ShapeError(std::string(op) + ": affine parameters " + to_string(gamma.shape()) + " / " +
                     to_string(beta.shape()) + " do not match " + std::to_string(C) + " channels");
  }
}

}  // namespace

Var group_norm(const Var& x, std::size_t groups, const Var& gamma, const Var& beta, double eps) {
  require_4d(x.value(), "group_norm");
  const std::size_t B = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (groups == 0 || C % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(groups) + " groups do not divide " + std::to_string(C) +
                     " channels");
  }
  check_affine(gamma, beta, C, "group_norm");
  NormPlan plan;
  plan.groups = B * groups;
  plan.members = (C / groups) * plane;
  plan.offsets.resize(plan.groups * plan.members);
  // Members of a (batch, group) pair are contiguous in memory.
  for (std::size_t i = 0; i < plan.offsets.size(); ++i) plan.offsets[i] = i;
  auto r = normalize(x.value(), plan, gamma.value(), beta.value(), plane, C, eps, nullptr, nullptr);
  return record(std::move(r.out), "group_norm", {x, gamma, beta},
                [plan, xhat = std::move(r.xhat), inv = std::move(r.inv_std), plane, C](Node& n) {
                  normalize_backward(n, plan, xhat, inv, plane, C);
                });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats, bool training, double eps) {
  require_4d(x.value(), "batch_norm");
  const std::size_t B = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  check_affine(gamma, beta, C, "batch_norm");
  if (stats.running_mean.shape() != Shape{C}) {
    stats.running_mean = Tensor({C}, 0.0);
    stats.running_var = Tensor({C}, 1.0);
  }
  if (!training) {
    Tensor out(x.shape());
    std::vector<double> inv(C);
    for (std::size_t c = 0; c < C; ++c) inv[c] = 1.0 / std::sqrt(stats.running_var[c] + eps);
    const Tensor mu = stats.running_mean;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const std::size_t c = (i / plane) % C;
      out[i] = (x.value()[i] - mu[c]) * inv[c] * gamma.value()[c] + beta.value()[c];
    }
    return record(std::move(out), "batch_norm", {x, gamma, beta}, [inv, mu, plane, C](Node& n) {
      Node& nx = *n.inputs[0];
      Node& ng = *n.inputs[1];
      Node& nb = *n.inputs[2];
      Tensor gx(nx.value.shape()), gg(ng.value.shape()), gb(nb.value.shape());
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const std::size_t c = (i / plane) % C;
        gx[i] = n.grad[i] * ng.value[c] * inv[c];
        gg[c] += n.grad[i] * (nx.value[i] - mu[c]) * inv[c];
        gb[c] += n.grad[i];
      }
      nx.accumulate(gx);
      ng.accumulate(gg);
      nb.accumulate(gb);
    });
  }
  NormPlan plan;
  plan.groups = C;
  plan.members = B * plane;
  plan.offsets.resize(C * plan.members);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t i = 0; i < plane; ++i) plan.offsets[c * plan.members + b * plane + i] = (b * C + c) * plane + i;
    }
  }
  std::vector<double> means(C), vars(C);
  auto r = normalize(x.value(), plan, gamma.value(), beta.value(), plane, C, eps, &means, &vars);
  const double m = static_cast<double>(plan.members);
  for (std::size_t c = 0; c < C; ++c) {
    const double unbiased = m > 1 ? vars[c] * m / (m - 1) : vars[c];
    stats.running_mean[c] = (1 - stats.momentum) * stats.running_mean[c] + stats.momentum * means[c];
    stats.running_var[c] = (1 - stats.momentum) * stats.running_var[c] + stats.momentum * unbiased;
  }
  return record(std::move(r.out), "batch_norm", {x, gamma, beta},
                [plan, xhat = std::move(r.xhat), inv = std::move(r.inv_std), plane, C](Node& n) {
                  normalize_backward(n, plan, xhat, inv, plane, C);
                });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = parts[0].shape();
  if (s0.size() < 2) throw ShapeError("concat_channels: rank must be at least 2, got " + to_string(s0));
  const std::size_t B = s0[0];
  const std::size_t inner = shape_numel(Shape(s0.begin() + 2, s0.end()));
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size() || s[0] != B || !std::equal(s.begin() + 2, s.end(), s0.begin() + 2)) {
      throw ShapeError("concat_channels: " + to_string(s) + " incompatible with " + to_string(s0));
    }
    widths.push_back(s[1]);
    total += s[1];
  }
  Shape os = s0;
  os[1] = total;
  Tensor out(os);
  std::size_t start = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t b = 0; b < B; ++b) {
      std::copy_n(&parts[k].value()[b * widths[k] * inner], widths[k] * inner, &out[(b * total + start) * inner]);
    }
    start += widths[k];
  }
  return record(std::move(out), "concat_channels", parts, [widths, B, inner, total](Node& n) {
    std::size_t start = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      Node& in = *n.inputs[k];
      if (in.requires_grad) {
        Tensor g(in.value.shape());
        for (std::size_t b = 0; b < B; ++b) {
          std::copy_n(&n.grad[(b * total + start) * inner], widths[k] * inner, &g[b * widths[k] * inner]);
        }
        in.accumulate(g);
      }
      start += widths[k];
    }
  });
}

Var slice_channels(const Var& x, std::size_t start, std::size_t count) {
  const Shape& s = x.shape();
  if (s.size() < 2 || start + count > s[1]) {
    throw ShapeError("slice_channels: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + to_string(s));
  }
  const std::size_t B = s[0], C = s[1];
  const std::size_t inner = shape_numel(Shape(s.begin() + 2, s.end()));
  Shape os = s;
  os[1] = count;
  Tensor out(os);
  for (std::size_t b = 0; b < B; ++b) {
    std::copy_n(&x.value()[(b * C + start) * inner], count * inner, &out[b * count * inner]);
  }
  return record(std::move(out), "slice_channels", {x}, [B, C, start, count, inner](Node& n) {
    Node& in = *n.inputs[0];
    Tensor g(in.value.shape());
    for (std::size_t b = 0; b < B; ++b) {
      std::copy_n(&n.grad[b * count * inner], count * inner, &g[(b * C + start) * inner]);
    }
    in.accumulate(g);
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return record(std::move(out), "reshape", {x}, [](Node& n) {
    Node& in = *n.inputs[0];
    in.accumulate(n.grad.reshaped(in.value.shape()));
  });
}

Var upsample_bilinear(const Var& x, std::size_t out_h, std::size_t out_w) {
  return record(numerics::upsample_bilinear(x.value(), out_h, out_w), "upsample_bilinear", {x}, [](Node& n) {
    Node& in = *n.inputs[0];
    in.accumulate(numerics::upsample_bilinear_grad(n.grad, in.value.shape()));
  });
}

Var rfft2(const Var& x) {
  const std::size_t W = x.value().rank() == 4 ? x.dim(3) : 0;
  return record(numerics::rfft2_packed(x.value()), "rfft2", {x}, [W](Node& n) {
    n.inputs[0]->accumulate(numerics::rfft2_packed_adjoint(n.grad, W));
  });
}

Var irfft2(const Var& packed, std::size_t width) {
  return record(numerics::irfft2_packed(packed.value(), width), "irfft2", {packed}, [](Node& n) {
    n.inputs[0]->accumulate(numerics::irfft2_packed_adjoint(n.grad));
  });
}

namespace {

// token_of[pixel] for an H x W map split into cell_h x cell_w cells.
std::vector<std::size_t> token_layout(std::size_t H, std::size_t W, std::size_t cell_h, std::size_t cell_w) {
  if (cell_h == 0 || cell_w == 0 || H % cell_h != 0 || W % cell_w != 0) {
    throw ShapeError("token layout: cells " + std::to_string(cell_h) + "x" + std::to_string(cell_w) +
                     " do not tile a " + std::to_string(H) + "x" + std::to_string(W) + " map");
  }
  const std::size_t gw = W / cell_w, area = cell_h * cell_w;
  std::vector<std::size_t> token_of(H * W);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const std::size_t cell = (y / cell_h) * gw + x / cell_w;
      token_of[y * W + x] = cell * area + (y % cell_h) * cell_w + x % cell_w;
    }
  }
  return token_of;
}

}  // namespace

Var to_tokens(const Var& x, std::size_t cell_h, std::size_t cell_w) {
  require_4d(x.value(), "to_tokens");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), L = H * W;
  const auto token_of = token_layout(H, W, cell_h, cell_w);
  Tensor out({B, L, C});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t p = 0; p < L; ++p) out[(b * L + token_of[p]) * C + c] = x.value()[(b * C + c) * L + p];
    }
  }
  return record(std::move(out), "to_tokens", {x}, [token_of, B, C, L](Node& n) {
    Node& in = *n.inputs[0];
    Tensor g(in.value.shape());
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t p = 0; p < L; ++p) g[(b * C + c) * L + p] = n.grad[(b * L + token_of[p]) * C + c];
      }
    }
    in.accumulate(g);
  });
}

Var from_tokens(const Var& tokens, std::size_t height, std::size_t width, std::size_t cell_h, std::size_t cell_w) {
  const Shape& s = tokens.shape();
  if (s.size() != 3 || s[1] != height * width) {
    throw ShapeError("from_tokens: tokens " + to_string(s) + " do not cover a " + std::to_string(height) + "x" +
                     std::to_string(width) + " map");
  }
  const std::size_t B = s[0], L = s[1], C = s[2];
  const auto token_of = token_layout(height, width, cell_h, cell_w);
  Tensor out({B, C, height, width});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t p = 0; p < L; ++p) out[(b * C + c) * L + p] = tokens.value()[(b * L + token_of[p]) * C + c];
    }
  }
  return record(std::move(out), "from_tokens", {tokens}, [token_of, B, C, L](Node& n) {
    Node& in = *n.inputs[0];
    Tensor g(in.value.shape());
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t p = 0; p < L; ++p) g[(b * L + token_of[p]) * C + c] = n.grad[(b * C + c) * L + p];
      }
    }
    in.accumulate(g);
  });
}

Var gather_tokens(const Var& x, const std::vector<std::vector<std::size_t>>& order) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw ShapeError("gather_tokens: expected [B, L, D], got " + to_string(s));
  const std::size_t B = s[0], L = s[1], D = s[2];
  if (order.size() != 1 && order.size() != B) {
    throw ShapeError("gather_tokens: " + std::to_string(order.size()) + " orders for batch of " + std::to_string(B));
  }
  const std::size_t Lo = order[0].size();
  for (const auto& o : order) {
    if (o.size() != Lo) throw ShapeError("gather_tokens: orders of unequal length");
    for (auto i : o) {
      if (i >= L) {
        throw ShapeError("gather_tokens: index " + std::to_string(i) + " out of range for " + to_string(s));
      }
    }
  }
  Tensor out({B, Lo, D});
  for (std::size_t b = 0; b < B; ++b) {
    const auto& o = order[order.size() == 1 ? 0 : b];
    for (std::size_t k = 0; k < Lo; ++k) std::copy_n(&x.value()[(b * L + o[k]) * D], D, &out[(b * Lo + k) * D]);
  }
  return record(std::move(out), "gather_tokens", {x}, [order, B, L, D, Lo](Node& n) {
    Node& in = *n.inputs[0];
    Tensor g(in.value.shape());
    for (std::size_t b = 0; b < B; ++b) {
      const auto& o = order[order.size() == 1 ? 0 : b];
      for (std::size_t k = 0; k < Lo; ++k) {
        for (std::size_t d = 0; d < D; ++d) g[(b * L + o[k]) * D + d] += n.grad[(b * Lo + k) * D + d];
      }
    }
    in.accumulate(g);
  });
}

Var patchify(const Var& x, std::size_t patch) {
  require_4d(x.value(), "patchify");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (patch == 0 || H % patch != 0 || W % patch != 0) {
    throw ShapeError("patchify: patch size " + std::to_string(patch) + " does not divide input " +
                     to_string(x.shape()));
  }
  const std::size_t gw = W / patch, L = (H / patch) * gw, F = C * patch * patch;
  // src_of[t * F + f] = flat offset within one batch element.
  std::vector<std::size_t> src_of(L * F);
  for (std::size_t t = 0; t < L; ++t) {
    const std::size_t py = (t / gw) * patch, px = (t % gw) * patch;
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t iy = 0; iy < patch; ++iy) {
        for (std::size_t ix = 0; ix < patch; ++ix) {
          src_of[t * F + (c * patch + iy) * patch + ix] = (c * H + py + iy) * W + px + ix;
        }
      }
    }
  }
  Tensor out({B, L, F});
  const std::size_t per = C * H * W;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < L * F; ++i) out[b * L * F + i] = x.value()[b * per + src_of[i]];
  }
  return record(std::move(out), "patchify", {x}, [src_of, B, per, LF = L * F](Node& n) {
    Node& in = *n.inputs[0];
    Tensor g(in.value.shape());
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t i = 0; i < LF; ++i) g[b * per + src_of[i]] += n.grad[b * LF + i];
    }
    in.accumulate(g);
  });
}

}  // namespace lidar::ad
