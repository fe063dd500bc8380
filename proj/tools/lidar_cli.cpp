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

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "lidar/pipeline.hpp"

namespace fs = std::filesystem;
using namespace lidar;

namespace {

struct Options {
  std::string data;
  std::string cache;
  std::string ckpt;
  std::string out;
  std::string pred;
  std::uint64_t seed = 0;
  std::vector<std::string> overrides;
  std::string mask_source = "gt-dilate";
  bool strict_cache = false;
  std::string modalities = "rgb,depth";
  std::size_t count = 32;
  std::size_t size = 64;
  std::size_t grid = 64;
  std::size_t iterations = 1000;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void warn(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

struct Overrides {
  std::vector<std::pair<std::string, std::string>> model;
  std::vector<std::pair<std::string, std::string>> train;
};

Overrides parse_overrides(const std::vector<std::string>& items) {
  Overrides o;
  std::vector<std::string> known;
  for (const auto& k : model::config_keys()) known.push_back("model." + k);
  for (const auto& k : pipeline::train_keys()) known.push_back("train." + k);
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + item + "'");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    if (key.rfind("model.", 0) == 0 && std::find(known.begin(), known.end(), key) != known.end()) {
      o.model.emplace_back(key.substr(6), value);
    } else if (key.rfind("train.", 0) == 0 && std::find(known.begin(), known.end(), key) != known.end()) {
      o.train.emplace_back(key.substr(6), value);
    } else {
      std::string msg = "unknown config key '" + key + "'";
      const std::string near = model::closest_key(key, known);
      if (!near.empty()) msg += "; did you mean '" + near + "'?";
      msg += "\nvalid keys:";
      for (const auto& k : known) msg += " " + k;
      throw UsageError(msg);
    }
  }
  return o;
}

void apply(model::LidarConfig& c, const Overrides& o) {
  for (const auto& [k, v] : o.model) model::set_config_value(c, k, v);
  c.validate();
}

void apply(pipeline::TrainConfig& c, const Overrides& o) {
  for (const auto& [k, v] : o.train) pipeline::set_train_value(c, k, v);
}

pipeline::Dataset load_data(const Options& opt) {
  if (opt.data.empty()) throw UsageError("--data is required");
  const auto result = pipeline::load_dataset(opt.data, split(opt.modalities, ','));
  for (const auto& e : result.errors) std::cerr << "error: " << e << '\n';
  if (!result.errors.empty()) {
    throw std::runtime_error(std::to_string(result.errors.size()) + " image group(s) could not be read");
  }
  if (result.data.samples.empty()) throw std::runtime_error("no image groups found in " + opt.data);
  return result.data;
}

model::LidarConfig config_for(const pipeline::Dataset& data) {
  model::LidarConfig c;
  const pipeline::Sample& s = data.samples.front();
  c.height_px = s.gt.dim(2);
  c.width_px = s.gt.dim(3);
  c.modality_channels.clear();
  for (const auto& img : s.images) c.modality_channels.push_back(img.dim(1));
  return c;
}

std::vector<edgss::ScanBundle> bundles_for(const pipeline::Dataset& data, const Options& opt, std::size_t patch) {
  const auto source = pipeline::parse_mask_source(opt.mask_source);
  std::optional<edgss::ScanCache> cache;
  if (!opt.cache.empty()) {
    cache = edgss::load_cache(opt.cache);
  } else if (opt.strict_cache) {
    throw UsageError("--strict-cache needs --cache");
  }
  std::vector<edgss::ScanBundle> bundles;
  for (const auto& s : data.samples) {
    bundles.push_back(
        pipeline::resolve_bundle(cache ? &*cache : nullptr, s, source, patch, opt.strict_cache, warn));
  }
  return bundles;
}

int cmd_generate(const Options& opt) {
  if (opt.out.empty()) throw UsageError("--out is required");
  pipeline::SyntheticSpec spec;
  spec.seed = opt.seed;
  spec.count = opt.count;
  spec.height = spec.width = opt.size;
  spec.modalities.clear();
  for (const auto& name : split(opt.modalities, ',')) spec.modalities.push_back({name, name == "rgb" ? 3u : 1u});
  const auto data = pipeline::generate_synthetic(spec);
  pipeline::save_dataset(data, opt.out);
  std::cout << "generated " << data.samples.size() << " image groups in " << opt.out << '\n';
  return 0;
}

int cmd_prescan(const Options& opt, const Overrides& ov) {
  if (opt.data.empty()) throw UsageError("--data is required");
  if (opt.cache.empty()) throw UsageError("--cache is required");
  const auto t0 = std::chrono::steady_clock::now();
  const auto loaded = pipeline::load_dataset(opt.data, split(opt.modalities, ','));
  model::LidarConfig c;
  apply(c, ov);
  const auto cache = pipeline::prescan(loaded.data, pipeline::parse_mask_source(opt.mask_source), c.patch);
  edgss::save_cache(cache, opt.cache);
  const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  if (!loaded.errors.empty()) {
    nlohmann::json manifest = {{"cache", opt.cache}, {"entries", cache.size()}, {"errors", loaded.errors}};
    write_text(opt.cache + ".manifest.json", manifest.dump(2) + "\n");
    for (const auto& e : loaded.errors) std::cerr << "error: " << e << '\n';
    std::cerr << "partial cache written; see " << opt.cache << ".manifest.json\n";
  }
  std::cout << "prescanned " << cache.size() << " groups in " << static_cast<long long>(ms + 0.5) << " ms\n";
  return loaded.errors.empty() ? 0 : 1;
}

int cmd_bench(const Options& opt) {
  const auto rows = pipeline::bench_scan(opt.grid, 8, opt.iterations, opt.seed);
  const std::string csv = pipeline::bench_csv(rows);
  if (opt.out.empty()) std::cout << csv;
  else write_text(opt.out, csv);
  const bool ok = std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.permutation_ok; });
  return ok ? 0 : 1;
}

int cmd_train(const Options& opt, const Overrides& ov) {
  if (opt.ckpt.empty()) throw UsageError("--ckpt is required");
  const auto data = load_data(opt);
  model::LidarConfig c = config_for(data);
  apply(c, ov);
  pipeline::TrainConfig tc;
  tc.seed = opt.seed;
  apply(tc, ov);
  const auto bundles = bundles_for(data, opt, c.patch);
  model::LidarModel m(c, opt.seed);
  const fs::path ckpt = opt.ckpt;
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = pipeline::train(m, data, bundles, tc, fs::path(opt.ckpt + ".last_good.json"));
  model::save_checkpoint(m, ckpt);
  const fs::path curve = opt.out.empty() ? fs::path(opt.ckpt + ".curve.csv") : fs::path(opt.out);
  write_text(curve, pipeline::curve_csv(result.curve));
  const auto s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "trained " << result.curve.size() << " steps in " << s << " s; loss " << result.curve.front().total
            << " -> " << result.curve.back().total << "\ncheckpoint " << ckpt.string() << "\ncurve "
            << curve.string() << '\n';
  return 0;
}

model::LidarModel load_model(const Options& opt, const Overrides& ov) {
  if (opt.ckpt.empty()) throw UsageError("--ckpt is required");
  model::LidarModel m = model::load_checkpoint(opt.ckpt);
  if (!ov.model.empty()) {
    model::LidarConfig want = m.config();
    apply(want, ov);
    if (want.hash() != m.config().hash()) {
      throw std::runtime_error("config overrides do not match the checkpoint: requested " + want.hash() +
                               ", checkpoint " + m.config().hash());
    }
  }
  return m;
}

void check_data_matches(const pipeline::Dataset& data, const model::LidarModel& m) {
  const model::LidarConfig d = config_for(data);
  const model::LidarConfig& c = m.config();
  if (d.height_px != c.height_px || d.width_px != c.width_px || d.modality_channels != c.modality_channels) {
    model::LidarConfig probe = c;
    probe.height_px = d.height_px;
    probe.width_px = d.width_px;
    probe.modality_channels = d.modality_channels;
    throw std::runtime_error("dataset layout does not match the checkpoint config: data implies " + probe.hash() +
                             ", checkpoint " + c.hash());
  }
}

int cmd_infer(const Options& opt, const Overrides& ov) {
  if (opt.out.empty()) throw UsageError("--out is required");
  model::LidarModel m = load_model(opt, ov);
  const auto data = load_data(opt);
  check_data_matches(data, m);
  const auto bundles = bundles_for(data, opt, m.config().patch);
  const auto preds = pipeline::predict(m, data, bundles);
  fs::create_directories(opt.out);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const std::string& id = data.samples[i].id;
    pipeline::write_png(fs::path(opt.out) / (id + "_prob.png"), pipeline::to_image(preds[i]));
    Tensor mask = preds[i];
    for (std::size_t k = 0; k < mask.size(); ++k) mask[k] = mask[k] >= 0.5 ? 1.0 : 0.0;
    pipeline::write_png(fs::path(opt.out) / (id + "_mask.png"), pipeline::to_image(mask));
  }
  std::cout << "wrote " << preds.size() << " probability and mask maps to " << opt.out << '\n';
  return 0;
}

int cmd_eval(const Options& opt, const Overrides& ov) {
  const auto data = load_data(opt);
  std::vector<Tensor> preds, gts;
  if (!opt.pred.empty()) {
    for (const auto& s : data.samples) {
      const Tensor p = pipeline::from_image(pipeline::read_png(fs::path(opt.pred) / (s.id + "_prob.png")));
      if (p.shape() != s.gt.shape()) {
        throw std::runtime_error(s.id + ": prediction " + to_string(p.shape()) + " vs ground truth " +
                                 to_string(s.gt.shape()));
      }
      preds.push_back(p);
    }
  } else if (!opt.ckpt.empty()) {
    model::LidarModel m = load_model(opt, ov);
    check_data_matches(data, m);
    preds = pipeline::predict(m, data, bundles_for(data, opt, m.config().patch));
  } else {
    throw UsageError("eval needs --pred or --ckpt");
  }
  for (const auto& s : data.samples) gts.push_back(s.gt);
  const std::string csv = pipeline::metrics_csv(pipeline::compute_metrics(preds, gts));
  if (opt.out.empty()) std::cout << csv;
  else write_text(opt.out, csv);
  return 0;
}

int cmd_params(const Options& opt, const Overrides& ov) {
  model::LidarModel m = opt.ckpt.empty() ? [&] {
    model::LidarConfig c;
    apply(c, ov);
    return model::LidarModel(c, opt.seed);
  }()
                                         : load_model(opt, ov);
  const std::string text = model::format_param_report(model::param_report(m));
  if (opt.out.empty()) std::cout << text;
  else write_text(opt.out, text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal crack segmentation toolkit"};
  app.require_subcommand(1);
  Options opt;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--set", opt.overrides, "Config override key=value (repeatable), e.g. model.patch_size=8");
    sub->add_option("--seed", opt.seed, "Random seed");
  };
  auto data_opts = [&](CLI::App* sub) {
    sub->add_option("--data", opt.data, "Dataset directory");
    sub->add_option("--modalities", opt.modalities, "Comma-separated modality names, RGB first")
        ->capture_default_str();
  };
  auto scan_opts = [&](CLI::App* sub) {
    sub->add_option("--cache", opt.cache, "Scan cache file");
    sub->add_option("--mask-source", opt.mask_source, "Guidance mask source")
        ->check(CLI::IsMember({"gt-dilate", "otsu"}))
        ->capture_default_str();
    sub->add_flag("--strict-cache", opt.strict_cache, "Fail instead of regenerating missing or stale scans");
  };

  auto* gen = app.add_subcommand("generate", "Write a synthetic multimodal crack dataset");
  gen->add_option("--out", opt.out, "Output directory")->required();
  gen->add_option("--count", opt.count, "Number of image groups")->capture_default_str();
  gen->add_option("--size", opt.size, "Image side length")->capture_default_str();
  gen->add_option("--modalities", opt.modalities, "Comma-separated modality names, RGB first")->capture_default_str();
  gen->add_option("--seed", opt.seed, "Random seed");

  auto* pre = app.add_subcommand("prescan", "Build the per-image scan cache");
  data_opts(pre);
  pre->get_option("--data")->required();
  pre->add_option("--cache", opt.cache, "Scan cache file to write")->required();
  pre->add_option("--mask-source", opt.mask_source, "Guidance mask source")
      ->check(CLI::IsMember({"gt-dilate", "otsu"}))
      ->capture_default_str();
  common(pre);

  auto* bench = app.add_subcommand("bench-scan", "Time scan-order generation and cached retrieval");
  bench->add_option("--grid", opt.grid, "Patch grid side")->capture_default_str();
  bench->add_option("--iterations", opt.iterations, "Timed iterations per strategy (>= 100)")
      ->check(CLI::Range(std::size_t{100}, std::size_t{100000000}))
      ->capture_default_str();
  bench->add_option("--out", opt.out, "CSV output file (default stdout)");
  bench->add_option("--seed", opt.seed, "Random seed");

  auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint and loss curve");
  data_opts(tr);
  tr->get_option("--data")->required();
  scan_opts(tr);
  tr->add_option("--ckpt", opt.ckpt, "Checkpoint file to write")->required();
  tr->add_option("--out", opt.out, "Loss curve CSV (default <ckpt>.curve.csv)");
  common(tr);

  auto* inf = app.add_subcommand("infer", "Write probability and mask PNGs");
  data_opts(inf);
  inf->get_option("--data")->required();
  scan_opts(inf);
  inf->add_option("--ckpt", opt.ckpt, "Checkpoint file")->required();
  inf->add_option("--out", opt.out, "Output directory")->required();
  common(inf);

  auto* ev = app.add_subcommand("eval", "Compute ODS, OIS, F1 and mIoU");
  data_opts(ev);
  ev->get_option("--data")->required();
  scan_opts(ev);
  ev->add_option("--pred", opt.pred, "Directory of <id>_prob.png maps");
  ev->add_option("--ckpt", opt.ckpt, "Checkpoint to run instead of reading predictions");
  ev->add_option("--out", opt.out, "Metrics CSV (default stdout)");
  common(ev);

  auto* par = app.add_subcommand("params", "Report parameter counts");
  par->add_option("--ckpt", opt.ckpt, "Checkpoint file (default: a fresh model)");
  par->add_option("--out", opt.out, "Report file (default stdout)");
  common(par);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  }

  try {
    const Overrides ov = parse_overrides(opt.overrides);
    if (gen->parsed()) return cmd_generate(opt);
    if (pre->parsed()) return cmd_prescan(opt, ov);
    if (bench->parsed()) return cmd_bench(opt);
    if (tr->parsed()) return cmd_train(opt, ov);
    if (inf->parsed()) return cmd_infer(opt, ov);
    if (ev->parsed()) return cmd_eval(opt, ov);
    if (par->parsed()) return cmd_params(opt, ov);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
