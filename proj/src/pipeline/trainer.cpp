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
#include <numeric>
#include <sstream>

#include "lidar/pipeline.hpp"

namespace lidar::pipeline {

const std::vector<std::string>& train_keys() {
  static const std::vector<std::string> keys{"steps", "batch",    "lr",         "weight_decay", "beta1",
                                             "beta2", "adam_eps", "poly_power", "seed"};
  return keys;
}

void set_train_value(TrainConfig& c, const std::string& key, const std::string& value) {
  auto number = [&] {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(value, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != value.size() || !std::isfinite(v) || v < 0.0) {
      throw std::invalid_argument("train." + key + ": expected a non-negative number, got '" + value + "'");
    }
    return v;
  };
  auto count = [&] {
    const double v = number();
    if (v != std::floor(v)) throw std::invalid_argument("train." + key + ": expected an integer, got '" + value + "'");
    return static_cast<std::size_t>(v);
  };
  if (key == "steps") c.steps = count();
  else if (key == "batch") c.batch = count();
  else if (key == "lr") c.lr = number();
  else if (key == "weight_decay") c.weight_decay = number();
  else if (key == "beta1") c.beta1 = number();
  else if (key == "beta2") c.beta2 = number();
  else if (key == "adam_eps") c.adam_eps = number();
  else if (key == "poly_power") c.poly_power = number();
  else if (key == "seed") c.seed = count();
  else {
    const std::string near = model::closest_key(key, train_keys());
    throw std::invalid_argument("unknown config key 'train." + key + "'" +
                                (near.empty() ? std::string() : "; did you mean 'train." + near + "'?"));
  }
}

double poly_lr(double base, std::size_t step, std::size_t total, double power) {
  if (total == 0 || step >= total) return 0.0;
  return base * std::pow(1.0 - static_cast<double>(step) / static_cast<double>(total), power);
}

AdamW::AdamW(std::vector<ad::Var*> params, const TrainConfig& config) : params_(std::move(params)), config_(config) {
  for (auto* p : params_) {
    m_.emplace_back(p->shape(), 0.0);
    v_.emplace_back(p->shape(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_)), c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& w = params_[k]->mutable_value();
    const Tensor& g = params_[k]->grad();
    const bool has_grad = g.size() == w.size();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = has_grad ? g[i] : 0.0;
      m_[k][i] = b1 * m_[k][i] + (1.0 - b1) * gi;
      v_[k][i] = b2 * v_[k][i] + (1.0 - b2) * gi * gi;
      const double update = (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + config_.adam_eps);
      w[i] -= lr * (update + config_.weight_decay * w[i]);
    }
  }
}

std::vector<ad::Var> stack_inputs(const Dataset& data, const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw std::invalid_argument("stack_inputs: empty batch");
  std::vector<ad::Var> out;
  for (std::size_t m = 0; m < data.modalities.size(); ++m) {
    const Tensor& first = data.samples.at(idx[0]).images.at(m);
    Shape shape = first.shape();
    shape[0] = idx.size();
    Tensor t(shape);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const Tensor& img = data.samples.at(idx[b]).images.at(m);
      if (img.size() != first.size()) throw ShapeError("stack_inputs: mixed image sizes in one batch");
      std::copy(img.storage().begin(), img.storage().end(), t.storage().begin() + b * first.size());
    }
    out.push_back(ad::constant(std::move(t)));
  }
  return out;
}

Tensor stack_targets(const Dataset& data, const std::vector<std::size_t>& idx) {
  const Tensor& first = data.samples.at(idx.at(0)).gt;
  Shape shape = first.shape();
  shape[0] = idx.size();
  Tensor t(shape);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const Tensor& g = data.samples.at(idx[b]).gt;
    if (g.size() != first.size()) throw ShapeError("stack_targets: mixed mask sizes in one batch");
    std::copy(g.storage().begin(), g.storage().end(), t.storage().begin() + b * first.size());
  }
  return t;
}

TrainResult train(model::LidarModel& model, const Dataset& data, const std::vector<edgss::ScanBundle>& bundles,
                  const TrainConfig& config, const std::filesystem::path& abort_checkpoint) {
  if (data.samples.empty()) throw std::invalid_argument("train: empty dataset");
  if (bundles.size() != data.samples.size()) {
    throw std::invalid_argument("train: " + std::to_string(bundles.size()) + " scan bundles for " +
                                std::to_string(data.samples.size()) + " samples");
  }
  if (config.batch == 0) throw std::invalid_argument("train: batch must be positive");
  StateRegistry reg;
  model.collect(reg);
  std::vector<ad::Var*> params;
  for (auto& [name, v] : reg.params) params.push_back(v);
  AdamW opt(params, config);

  Rng rng(config.seed);
  std::vector<std::size_t> order(data.samples.size());
  std::size_t cursor = order.size();
  TrainResult result;
  const std::size_t batch = std::min(config.batch, data.samples.size());

  for (std::size_t step = 0; step < config.steps; ++step) {
    std::vector<std::size_t> idx;
    while (idx.size() < batch) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    std::vector<const edgss::ScanBundle*> bptr;
    for (auto i : idx) bptr.push_back(&bundles[i]);

    const std::vector<Tensor> last_good = reg.values();
    std::string failure;
    LossTerms terms;
    try {
      terms = loss_terms(model.forward(stack_inputs(data, idx), bptr, true), stack_targets(data, idx),
                         model.config().dice_eps);
      for (auto* p : params) p->zero_grad();
      ad::backward(terms.total);
      for (auto* p : params) {
        if (!p->grad().all_finite()) failure = "non-finite gradient";
      }
    } catch (const NumericError& e) {
      failure = e.what();
    }
    if (failure.empty() && !std::isfinite(terms.total.value()[0])) failure = "non-finite loss";
    if (!failure.empty()) {
      for (std::size_t k = 0; k < params.size(); ++k) params[k]->mutable_value() = last_good[k];
      std::string where;
      if (!abort_checkpoint.empty()) {
        model::save_checkpoint(model, abort_checkpoint);
        where = "; last good parameters saved to " + abort_checkpoint.string();
      }
      throw TrainingAborted("train: step " + std::to_string(step) + ": " + failure + where);
    }
    result.curve.push_back({step, terms.total.value()[0], terms.dice.value()[0], terms.bce.value()[0]});
    opt.step(poly_lr(config.lr, step, config.steps, config.poly_power));
  }
  return result;
}

std::string curve_csv(const std::vector<LossRecord>& curve) {
  std::ostringstream os;
  os.precision(17);
  os << "step,loss_total,loss_dice,loss_bce\n";
  for (const auto& r : curve) os << r.step << ',' << r.total << ',' << r.dice << ',' << r.bce << '\n';
  return os.str();
}

std::vector<Tensor> predict(model::LidarModel& model, const Dataset& data,
                            const std::vector<edgss::ScanBundle>& bundles, std::size_t batch) {
  if (bundles.size() != data.samples.size()) throw std::invalid_argument("predict: one scan bundle per sample");
  std::vector<Tensor> out;
  for (std::size_t start = 0; start < data.samples.size(); start += std::max<std::size_t>(1, batch)) {
    std::vector<std::size_t> idx;
    std::vector<const edgss::ScanBundle*> bptr;
    for (std::size_t i = start; i < std::min(data.samples.size(), start + std::max<std::size_t>(1, batch)); ++i) {
      idx.push_back(i);
      bptr.push_back(&bundles[i]);
    }
    const Tensor y = model.forward(stack_inputs(data, idx), bptr, false).value();
    const std::size_t per = y.size() / idx.size();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      Tensor one({1, 1, y.dim(2), y.dim(3)});
      std::copy(y.storage().begin() + b * per, y.storage().begin() + (b + 1) * per, one.storage().begin());
      out.push_back(std::move(one));
    }
  }
  return out;
}

}  // namespace lidar::pipeline
