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

#include "lidar/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace lidar::model {

using nlohmann::json;

namespace {

ldmk::LdmkConfig square_ldmk(const LidarConfig& c) {
  ldmk::LdmkConfig l;
  l.in_channels = l.out_channels = c.width;
  l.reduction = c.reduction;
  l.ema_gamma = c.ema_gamma;
  return l;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != value.size() || value.front() == '-') {
    throw std::invalid_argument(key + ": expected a non-negative integer, got '" + value + "'");
  }
  return static_cast<std::size_t>(v);
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != value.size() || !std::isfinite(v)) {
    throw std::invalid_argument(key + ": expected a finite number, got '" + value + "'");
  }
  return v;
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

json tensor_json(const Tensor& t) { return {{"shape", t.shape()}, {"values", t.storage()}}; }

Tensor tensor_from_json(const json& j, const std::string& what) {
  try {
    Shape shape = j.at("shape").get<Shape>();
    std::vector<double> values = j.at("values").get<std::vector<double>>();
    if (shape.empty() && values.empty()) return Tensor();
    if (shape_numel(shape) != values.size()) {
      throw CheckpointError(what + ": shape " + to_string(shape) + " holds " + std::to_string(shape_numel(shape)) +
                            " values, file has " + std::to_string(values.size()));
    }
    return Tensor(std::move(shape), std::move(values));
  } catch (const json::exception& e) {
    throw CheckpointError(what + ": " + e.what());
  }
}

}  // namespace

void LidarConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (patch == 0) fail("patch must be positive");
  if (height_px == 0 || width_px == 0) fail("resolution must be positive");
  if (height_px % patch || width_px % patch) {
    fail("patch " + std::to_string(patch) + " does not divide " + std::to_string(height_px) + "x" +
         std::to_string(width_px));
  }
  if (stages == 0) fail("stages must be at least 1");
  if (modality_channels.empty()) fail("at least one modality (RGB) is required");
  for (std::size_t c : modality_channels) {
    if (c == 0) fail("modality channel counts must be positive");
  }
  if (width == 0 || groups == 0 || width % groups) {
    fail("groups " + std::to_string(groups) + " must divide width " + std::to_string(width));
  }
  if (state_dim == 0) fail("state_dim must be positive");
  if (reduction == 0) fail("reduction must be positive");
  if (!(ema_gamma >= 0.0 && ema_gamma < 1.0)) fail("ema_gamma must lie in [0, 1)");
  if (!(dice_eps > 0.0)) fail("dice_eps must be positive");
  const std::size_t gh = grid_h(), gw = grid_w();
  if (!numerics::is_power_of_two(gh) || !numerics::is_power_of_two(gw) || gh < 2 || gw < 2) {
    fail("feature grid " + std::to_string(gh) + "x" + std::to_string(gw) +
         " must be a power of two of at least 2 on each side for the spectral path");
  }
}

json LidarConfig::to_json() const {
  return {{"patch_size", patch},        {"stages", stages},           {"width", width},
          {"height_px", height_px}, {"width_px", width_px},       {"modality_channels", modality_channels},
          {"state_dim", state_dim}, {"groups", groups},           {"reduction", reduction},
          {"ema_gamma", ema_gamma}, {"dice_eps", dice_eps}};
}

LidarConfig LidarConfig::from_json(const json& j) {
  LidarConfig c;
  try {
    c.patch = j.at("patch_size").get<std::size_t>();
    c.stages = j.at("stages").get<std::size_t>();
    c.width = j.at("width").get<std::size_t>();
    c.height_px = j.at("height_px").get<std::size_t>();
    c.width_px = j.at("width_px").get<std::size_t>();
    c.modality_channels = j.at("modality_channels").get<std::vector<std::size_t>>();
    c.state_dim = j.at("state_dim").get<std::size_t>();
    c.groups = j.at("groups").get<std::size_t>();
    c.reduction = j.at("reduction").get<std::size_t>();
    c.ema_gamma = j.at("ema_gamma").get<double>();
    c.dice_eps = j.at("dice_eps").get<double>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string LidarConfig::hash() const {
  const std::string text = to_json().dump();
  return edgss::hash_hex(
      edgss::fnv1a64({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}));
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{"patch_size","stages", "width",     "height_px", "width_px",
                                             "modality_channels", "state_dim", "groups", "reduction",
                                             "ema_gamma", "dice_eps"};
  return keys;
}

std::string closest_key(const std::string& key, const std::vector<std::string>& candidates) {
  std::string best;
  std::size_t best_d = std::max<std::size_t>(3, key.size() / 2) + 1;
  for (const auto& c : candidates) {
    const std::size_t d = edit_distance(key, c);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

void set_config_value(LidarConfig& c, const std::string& key, const std::string& value) {
  if (key == "patch_size") c.patch = parse_size(key, value);
  else if (key == "stages") c.stages = parse_size(key, value);
  else if (key == "width") c.width = parse_size(key, value);
  else if (key == "height_px") c.height_px = parse_size(key, value);
  else if (key == "width_px") c.width_px = parse_size(key, value);
  else if (key == "state_dim") c.state_dim = parse_size(key, value);
  else if (key == "groups") c.groups = parse_size(key, value);
  else if (key == "reduction") c.reduction = parse_size(key, value);
  else if (key == "ema_gamma") c.ema_gamma = parse_double(key, value);
  else if (key == "dice_eps") c.dice_eps = parse_double(key, value);
  else if (key == "modality_channels") {
    std::vector<std::size_t> chans;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) chans.push_back(parse_size(key, item));
    c.modality_channels = std::move(chans);
  } else {
    const std::string near = closest_key(key, config_keys());
    throw std::invalid_argument("unknown config key '" + key + "'" +
                                (near.empty() ? std::string() : "; did you mean '" + near + "'?"));
  }
}

ad::Var patch_embed(const ad::Var& image, std::size_t patch, const ad::Var& weight, const ad::Var& bias) {
  require_4d(image.value(), "patch_embed");
  const ad::Var patches = ad::patchify(image, patch);
  if (weight.dim(1) != patches.dim(2)) {
    throw ShapeError("patch_embed: projection expects " + std::to_string(weight.dim(1)) + " features per patch, " +
                     "image gives " + std::to_string(patches.dim(2)));
  }
  return ad::from_tokens(ad::linear(patches, weight, bias), image.dim(2) / patch, image.dim(3) / patch, 1, 1);
}

LidarModel::LidarModel(const LidarConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t C = config_.width, p = config_.patch, M = config_.modalities();
  lacavss::LacaVssConfig block;
  block.channels = C;
  block.tokens = config_.grid_h() * config_.grid_w();
  block.state_dim = config_.state_dim;
  block.groups = config_.groups;
  block.reduction = config_.reduction;
  block.ema_gamma = config_.ema_gamma;
  const ldmk::LdmkConfig square = square_ldmk(config_);

  for (std::size_t m = 0; m < M; ++m) {
    Stream s;
    const std::size_t fan_in = config_.modality_channels[m] * p * p;
    s.embed_weight = ad::parameter(Tensor::normal({C, fan_in}, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng));
    s.embed_bias = ad::parameter(Tensor({C}, 0.0));
    for (std::size_t n = 0; n < config_.stages; ++n) s.stages.emplace_back(block, rng);
    streams.push_back(std::move(s));
  }
  for (std::size_t n = 0; n < config_.stages; ++n) {
    Level level;
    for (std::size_t m = 0; m < M; ++m) level.afdp.emplace_back(C, square, rng);
    level.fusion = ld3cf::DualPoolFusion(C, M - 1, square, rng);
    levels.push_back(std::move(level));
  }
  gate = ld3cf::CrossScaleGate(C, config_.stages, rng);
  head = ld3cf::SegHead(C, config_.stages, rng);
}

ad::Var LidarModel::forward_logits(const std::vector<ad::Var>& inputs,
                                   const std::vector<const edgss::ScanBundle*>& bundles, bool training) {
  const std::size_t M = config_.modalities();
  if (inputs.size() != M) {
    throw ShapeError("model forward: expected " + std::to_string(M) + " modalities, got " +
                     std::to_string(inputs.size()));
  }
  for (std::size_t m = 0; m < M; ++m) {
    const Shape& s = inputs[m].shape();
    const Shape want{inputs[0].dim(0), config_.modality_channels[m], config_.height_px, config_.width_px};
    if (s != want) {
      throw ShapeError("model forward: modality " + std::to_string(m) + " is " + to_string(s) + ", expected " +
                       to_string(want));
    }
  }
  if (bundles.empty() || std::any_of(bundles.begin(), bundles.end(), [](auto* b) { return b == nullptr; })) {
    throw std::invalid_argument("model forward: a scan bundle is required for every image");
  }

  std::vector<std::vector<ad::Var>> features(M);
  for (std::size_t m = 0; m < M; ++m) {
    ad::Var x = patch_embed(inputs[m], config_.patch, streams[m].embed_weight, streams[m].embed_bias);
    for (auto& stage : streams[m].stages) {
      x = stage.forward(x, bundles, training);
      features[m].push_back(x);
    }
  }

  std::vector<ad::Var> fused_levels;
  std::optional<ad::Var> previous;
  for (std::size_t n = 0; n < config_.stages; ++n) {
    Level& level = levels[n];
    const ad::Var rgb = level.fusion.rgb_enhance(level.afdp[0].forward(features[0][n], training));
    std::vector<ad::Var> fused;
    for (std::size_t m = 1; m < M; ++m) {
      fused.push_back(level.fusion.fuse_modality(rgb, level.afdp[m].forward(features[m][n], training), m - 1, training));
    }
    const ad::Var gated = gate.forward(ld3cf::sum_modalities(rgb, fused), previous, n);
    previous = gated;
    fused_levels.push_back(gated);
  }
  return head.logits(fused_levels, config_.height_px, config_.width_px);
}

ad::Var LidarModel::forward(const std::vector<ad::Var>& inputs, const std::vector<const edgss::ScanBundle*>& bundles,
                            bool training) {
  return ad::sigmoid(forward_logits(inputs, bundles, training));
}

void LidarModel::permute_auxiliary(const std::vector<std::size_t>& perm) {
  const std::size_t aux = config_.modalities() - 1;
  if (perm.size() != aux || !edgss::is_permutation(perm, aux)) {
    throw std::invalid_argument("permute_auxiliary: not a permutation of " + std::to_string(aux) + " positions");
  }
  auto take = [&](auto& vec, std::size_t offset) {
    auto old = vec;
    for (std::size_t i = 0; i < aux; ++i) vec[offset + i] = old[offset + perm[i]];
  };
  take(streams, 1);
  take(config_.modality_channels, 1);
  for (auto& level : levels) {
    take(level.afdp, 1);
    take(level.fusion.transforms, 0);
  }
}

void LidarModel::collect(StateRegistry& reg) {
  for (std::size_t m = 0; m < streams.size(); ++m) {
    const std::string base = "stream" + std::to_string(m);
    reg.add(base + ".embed.weight", streams[m].embed_weight);
    reg.add(base + ".embed.bias", streams[m].embed_bias);
    for (std::size_t n = 0; n < streams[m].stages.size(); ++n) {
      streams[m].stages[n].collect(base + ".stage" + std::to_string(n), reg);
    }
  }
  for (std::size_t n = 0; n < levels.size(); ++n) {
    const std::string base = "level" + std::to_string(n);
    for (std::size_t m = 0; m < levels[n].afdp.size(); ++m) {
      levels[n].afdp[m].collect(base + ".afdp" + std::to_string(m), reg);
    }
    levels[n].fusion.collect(base + ".fusion", reg);
  }
  gate.collect("gate", reg);
  head.collect("head", reg);
}

json checkpoint_json(LidarModel& model) {
  StateRegistry reg;
  model.collect(reg);
  json params = json::object(), emas = json::object(), norms = json::object();
  for (const auto& [name, v] : reg.params) params[name] = tensor_json(v->value());
  for (const auto& [name, e] : reg.emas) {
    emas[name] = {{"rho_hat", e->rho_hat}, {"gamma", e->gamma}, {"steps", e->steps}, {"active", e->active}};
  }
  for (const auto& [name, s] : reg.norms) {
    norms[name] = {{"momentum", s->momentum},
                   {"running_mean", tensor_json(s->running_mean)},
                   {"running_var", tensor_json(s->running_var)}};
  }
  return {{"version", kCheckpointVersion},
          {"config", model.config().to_json()},
          {"config_hash", model.config().hash()},
          {"params", params},
          {"emas", emas},
          {"norms", norms}};
}

LidarModel model_from_checkpoint(const json& j) {
  if (!j.is_object() || !j.contains("version")) throw CheckpointError("checkpoint: missing version");
  if (j["version"] != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + j["version"].dump() + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  LidarConfig config;
  try {
    config = LidarConfig::from_json(j.at("config"));
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  const std::string stored_hash = j.value("config_hash", "");
  if (stored_hash != config.hash()) {
    throw CheckpointError("checkpoint: config hash " + stored_hash + " does not match config " + config.hash());
  }
  LidarModel model(config, 0);
  StateRegistry reg;
  model.collect(reg);

  auto section = [&](const char* key) -> const json& {
    if (!j.contains(key) || !j[key].is_object()) throw CheckpointError(std::string("checkpoint: missing ") + key);
    return j[key];
  };
  const json& params = section("params");
  if (params.size() != reg.params.size()) {
    throw CheckpointError("checkpoint: " + std::to_string(params.size()) + " parameters, model has " +
                          std::to_string(reg.params.size()));
  }
  for (auto& [name, v] : reg.params) {
    if (!params.contains(name)) throw CheckpointError("checkpoint: missing parameter " + name);
    Tensor t = tensor_from_json(params[name], name);
    if (t.shape() != v->shape()) {
      throw CheckpointError("checkpoint: " + name + " has shape " + to_string(t.shape()) + ", model expects " +
                            to_string(v->shape()));
    }
    if (!t.all_finite()) throw CheckpointError("checkpoint: " + name + " holds non-finite values");
    v->mutable_value() = std::move(t);
  }
  const json& emas = section("emas");
  for (auto& [name, e] : reg.emas) {
    if (!emas.contains(name)) throw CheckpointError("checkpoint: missing EMA state " + name);
    try {
      const json& s = emas[name];
      e->rho_hat = s.at("rho_hat").get<double>();
      e->gamma = s.at("gamma").get<double>();
      e->steps = s.at("steps").get<std::uint64_t>();
      e->active = s.at("active").get<std::size_t>();
    } catch (const json::exception& ex) {
      throw CheckpointError("checkpoint: EMA " + name + ": " + ex.what());
    }
  }
  const json& norms = section("norms");
  for (auto& [name, s] : reg.norms) {
    if (!norms.contains(name)) throw CheckpointError("checkpoint: missing norm statistics " + name);
    const json& n = norms[name];
    if (!n.contains("momentum") || !n["momentum"].is_number()) {
      throw CheckpointError("checkpoint: norm " + name + " lacks momentum");
    }
    s->momentum = n["momentum"].get<double>();
    s->running_mean = tensor_from_json(n.value("running_mean", json::object()), name + ".running_mean");
    s->running_var = tensor_from_json(n.value("running_var", json::object()), name + ".running_var");
  }
  return model;
}

void save_checkpoint(LidarModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("checkpoint: cannot write " + path.string());
  out << checkpoint_json(model).dump() << '\n';
  if (!out) throw CheckpointError("checkpoint: write failed for " + path.string());
}

LidarModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw CheckpointError("checkpoint: " + path.string() + " is not valid JSON: " + e.what());
  }
  return model_from_checkpoint(j);
}

ParamReport param_report(LidarModel& model) {
  StateRegistry reg;
  model.collect(reg);
  std::map<std::string, std::size_t> by_module;
  std::vector<std::string> order;
  for (const auto& [name, v] : reg.params) {
    // Group by the first two path components, e.g. "stream0.stage1" or "head.linear".
    std::string key = name.substr(0, name.find('.'));
    if (key.rfind("stream", 0) == 0 || key.rfind("level", 0) == 0) {
      const auto second = name.find('.', key.size() + 1);
      key = name.substr(0, second);
    }
    if (!by_module.count(key)) order.push_back(key);
    by_module[key] += v->value().size();
  }
  ParamReport report;
  for (const auto& k : order) report.modules.push_back({k, by_module[k]});
  report.total = reg.parameter_count();
  for (std::size_t c : {model.config().width, std::size_t{64}}) {
    ldmk::LdmkConfig l;
    l.in_channels = l.out_channels = c;
    l.reduction = model.config().reduction;
    report.comparisons.push_back(
        {c, l.mid(), l.reduction, ldmk::analytic_parameter_count(l), ldmk::plain_conv_parameter_count(c, c, 3)});
  }
  return report;
}

std::string format_param_report(const ParamReport& report) {
  std::ostringstream os;
  os << "module,parameters\n";
  for (const auto& r : report.modules) os << r.module << ',' << r.count << '\n';
  os << "total," << report.total << "\n\n";
  os << "channels,mid,reduction,ldmk_weights,plain_3x3_weights,ratio\n";
  for (const auto& c : report.comparisons) {
    os << c.channels << ',' << c.mid << ',' << c.reduction << ',' << c.ldmk << ',' << c.plain3x3 << ','
       << static_cast<double>(c.ldmk) / static_cast<double>(c.plain3x3) << '\n';
  }
  return os.str();
}

}  // namespace lidar::model
