/*
 * Copyright 2026 The fairmp Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "fairmp/pipeline.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "fairmp/digest.h"
#include "fairmp/errors.h"

namespace fairmp {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const std::set<std::string> kConfigKeys = {
    "dataset",     "manifest",      "split",        "network",
    "mode",        "granularity",   "palette",      "b_min",
    "b_max",       "baq_init",      "lambda_fair",  "lambda_baq_b",
    "weight_lr",   "logit_lr",      "weight_decay", "epochs",
    "batch_size",  "pretrain_epochs", "pretrain_lr", "calibration_batches",
    "activation_bits", "seed",      "num_seeds",    "sweep",
    "output_dir"};

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

int parse_bits_suffix(const std::string& name, const std::string& prefix) {
  const std::string digits = name.substr(prefix.size());
  if (digits.empty() || !std::all_of(digits.begin(), digits.end(), ::isdigit) ||
      digits.size() > 2) {
    throw ConfigError("bad bit-width in mode '" + name + "'");
  }
  const int bits = std::stoi(digits);
  if (bits < 2 || bits > 32) throw ConfigError("mode '" + name + "' needs 2 <= bits <= 32");
  return bits;
}

void write_text(const fs::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

void save_network(const Network& net, const fs::path& path) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  net.save(path);
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("corrupt JSON in " + path.string() + ": " + e.what());
  }
}

std::vector<std::uint64_t> seed_list(std::uint64_t first, std::size_t count) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < count; ++i) seeds.push_back(first + i);
  return seeds;
}

std::vector<EpochRecord> to_records(const TrainResult& train) {
  std::vector<EpochRecord> out;
  for (const auto& e : train.epochs) {
    out.push_back({e.epoch, e.task, e.fair, e.bitrate, e.total, e.avg_bits,
                   e.first_forward_bits});
  }
  return out;
}

Granularity config_granularity(const ExperimentConfig& c) {
  try {
    return parse_granularity(c.granularity);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

Dataset load_dataset(const ExperimentConfig& config, std::uint64_t root) {
  if (!config.manifest.empty()) return read_dataset(config.manifest);
  if (!config.data_seed) return generate_synthetic(resolved_dataset_spec(config, root));
  const fs::path manifest = output_root(config) / "data" / "manifest.csv";
  if (!fs::exists(manifest)) {
    throw IoError("no dataset at " + manifest.string() + "; run generate-data first");
  }
  return read_dataset(manifest);
}

bool needs_allocation(const ExperimentConfig& config, const Mode& mode) {
  return mode.kind == ModeKind::kFairQuantQat ||
         (mode.kind == ModeKind::kFairQuantBaq && config.baq_init == "warm-start");
}

Network ensure_checkpoint(const ExperimentConfig& config, const DatasetSplit& data,
                          std::uint64_t root) {
  const fs::path path = seed_dir(config, root) / "checkpoint.json";
  if (fs::exists(path)) return Network::load(path);
  auto outcome = pretrain(config, data, root);
  save_network(outcome.network, path);
  write_json(seed_dir(config, root) / "pretrain.json", outcome.result.to_json());
  return std::move(outcome.network);
}

Allocation load_allocation(const fs::path& path) {
  const auto record = allocation_from_json(read_json(path));
  if (!record.palette) throw IoError(path.string() + " holds no palette");
  Allocation a;
  a.assignment = record.assignment;
  a.palette = *record.palette;
  a.thresholds = record.thresholds;
  a.avg_bits = average_bits(a.assignment);
  return a;
}

void write_calibration(const ExperimentConfig& config, std::uint64_t root,
                       const CalibrationOutcome& cal) {
  write_json(seed_dir(config, root) / "importance.json",
             importance_to_json(cal.scoped, cal.reduced));
  AllocationRecord record;
  record.assignment = cal.allocation.assignment;
  record.palette = cal.allocation.palette;
  record.thresholds = cal.allocation.thresholds;
  write_json(seed_dir(config, root) / "allocation.json", allocation_to_json(record));
}

std::optional<Allocation> ensure_allocation(const ExperimentConfig& config, const Mode& mode,
                                            Network& checkpoint, const DatasetSplit& data,
                                            std::uint64_t root) {
  if (!needs_allocation(config, mode)) return std::nullopt;
  const fs::path path = seed_dir(config, root) / "allocation.json";
  if (fs::exists(path)) return load_allocation(path);
  auto cal = calibrate_allocate(config, checkpoint, data, root);
  write_calibration(config, root, cal);
  return cal.allocation;
}

ExperimentConfig with_seed(ExperimentConfig config, std::uint64_t root) {
  config.seed = root;
  return config;
}

RunResult make_result(const ExperimentConfig& config, const std::string& mode,
                      std::uint64_t root) {
  ExperimentConfig c = with_seed(config, root);
  c.mode = mode;
  RunResult r;
  r.mode = mode;
  r.seed = root;
  r.config = c.to_json();
  r.config_digest = c.digest();
  r.group_key = c.group_key();
  return r;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

// ---------------------------------------------------------------------------
// Mode

Mode Mode::parse(const std::string& name) {
  if (name == "fp32") return {ModeKind::kFp32, 32};
  if (name == "fairquant-qat") return {ModeKind::kFairQuantQat, 0};
  if (name == "fairquant-baq") return {ModeKind::kFairQuantBaq, 0};
  if (name.rfind("ptq-uniform-", 0) == 0) {
    return {ModeKind::kPtqUniform, parse_bits_suffix(name, "ptq-uniform-")};
  }
  if (name.rfind("uniform-", 0) == 0) {
    return {ModeKind::kUniformQat, parse_bits_suffix(name, "uniform-")};
  }
  throw ConfigError("unknown mode '" + name +
                    "' (expected fp32, uniform-<b>, fairquant-qat, fairquant-baq, "
                    "ptq-uniform-<b>)");
}

std::string Mode::name() const {
  switch (kind) {
    case ModeKind::kFp32: return "fp32";
    case ModeKind::kUniformQat: return "uniform-" + std::to_string(bits);
    case ModeKind::kFairQuantQat: return "fairquant-qat";
    case ModeKind::kFairQuantBaq: return "fairquant-baq";
    case ModeKind::kPtqUniform: return "ptq-uniform-" + std::to_string(bits);
  }
  return "";
}

// ---------------------------------------------------------------------------
// ExperimentConfig

json default_network_json() {
  return json::array({
      {{"kind", "conv2d"}, {"out", 8}, {"kernel", 3}, {"stride", 1}, {"padding", 1}},
      {{"kind", "relu"}},
      {{"kind", "conv2d"}, {"out", 16}, {"kernel", 3}, {"stride", 2}, {"padding", 1}},
      {{"kind", "relu"}},
      {{"kind", "flatten"}},
      {{"kind", "dense"}, {"out", 32}},
      {{"kind", "relu"}},
      {{"kind", "dense"}, {"out", "classes"}},
  });
}

json ExperimentConfig::to_json() const {
  json ds = dataset;
  ds["seed"] = data_seed ? json(*data_seed) : json(nullptr);
  return json{
      {"dataset", ds},
      {"manifest", manifest},
      {"split", split},
      {"network", network.is_null() ? default_network_json() : network},
      {"mode", mode},
      {"granularity", granularity},
      {"palette", {{"bits", palette.bits}, {"proportions", palette.proportions}}},
      {"b_min", b_min},
      {"b_max", b_max},
      {"baq_init", baq_init},
      {"lambda_fair", lambda_fair},
      {"lambda_baq_b", lambda_baq_b},
      {"weight_lr", weight_lr},
      {"logit_lr", logit_lr},
      {"weight_decay", weight_decay},
      {"epochs", epochs},
      {"batch_size", batch_size},
      {"pretrain_epochs", pretrain_epochs},
      {"pretrain_lr", pretrain_lr},
      {"calibration_batches", calibration_batches},
      {"activation_bits", activation_bits},
      {"seed", seed},
      {"num_seeds", num_seeds},
      {"sweep", {{"axis", sweep_axis}, {"values", sweep_values}, {"num_seeds", sweep_seeds}}},
      {"output_dir", output_dir},
  };
}

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : doc.items()) {
    if (!kConfigKeys.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  ExperimentConfig c;
  try {
    if (doc.contains("dataset")) {
      const json& ds = doc.at("dataset");
      c.dataset = ds.get<DatasetSpec>();
      if (ds.contains("seed")) {
        c.data_seed = ds.at("seed").is_null() ? std::nullopt
                                              : std::optional(ds.at("seed").get<std::uint64_t>());
      }
    }
    c.manifest = doc.value("manifest", c.manifest);
    c.split = doc.value("split", c.split);
    c.network = doc.value("network", default_network_json());
    c.mode = doc.value("mode", c.mode);
    c.granularity = doc.value("granularity", c.granularity);
    if (doc.contains("palette")) {
      c.palette.bits = doc.at("palette").at("bits").get<std::vector<int>>();
      c.palette.proportions = doc.at("palette").at("proportions").get<std::vector<double>>();
    }
    c.b_min = doc.value("b_min", c.b_min);
    c.b_max = doc.value("b_max", c.b_max);
    c.baq_init = doc.value("baq_init", c.baq_init);
    c.lambda_fair = doc.value("lambda_fair", c.lambda_fair);
    c.lambda_baq_b = doc.value("lambda_baq_b", c.lambda_baq_b);
    c.weight_lr = doc.value("weight_lr", c.weight_lr);
    c.logit_lr = doc.value("logit_lr", c.logit_lr);
    c.weight_decay = doc.value("weight_decay", c.weight_decay);
    c.epochs = doc.value("epochs", c.epochs);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.pretrain_epochs = doc.value("pretrain_epochs", c.pretrain_epochs);
    c.pretrain_lr = doc.value("pretrain_lr", c.pretrain_lr);
    c.calibration_batches = doc.value("calibration_batches", c.calibration_batches);
    c.activation_bits = doc.value("activation_bits", c.activation_bits);
    c.seed = doc.value("seed", c.seed);
    c.num_seeds = doc.value("num_seeds", c.num_seeds);
    if (doc.contains("sweep")) {
      const json& sw = doc.at("sweep");
      c.sweep_axis = sw.value("axis", c.sweep_axis);
      c.sweep_values = sw.value("values", c.sweep_values);
      c.sweep_seeds = sw.value("num_seeds", c.sweep_seeds);
    }
    c.output_dir = doc.value("output_dir", c.output_dir);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  const Mode m = Mode::parse(mode);
  config_granularity(*this);
  if (manifest.empty()) {
    try {
      dataset.validate();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }
  if (!network.is_array() || network.empty()) throw ConfigError("network must be a layer list");
  try {
    palette.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("palette: ") + e.what());
  }
  if (palette.bits.front() < 2) throw ConfigError("palette bit-widths must be >= 2");
  if (b_min < 2 || b_min >= b_max) throw ConfigError("need 2 <= b_min < b_max");
  if (baq_init != "high-precision" && baq_init != "warm-start") {
    throw ConfigError("baq_init must be 'high-precision' or 'warm-start'");
  }
  if (m.kind == ModeKind::kFairQuantBaq && baq_init == "warm-start" &&
      (palette.bits.front() < b_min || palette.bits.back() > b_max)) {
    throw ConfigError("warm-start needs every palette bit-width inside [b_min, b_max]");
  }
  if (lambda_fair < 0 || lambda_baq_b < 0) throw ConfigError("loss weights must be >= 0");
  if (!(weight_lr > 0) || !(logit_lr > 0) || !(pretrain_lr > 0) || weight_decay < 0) {
    throw ConfigError("learning rates must be > 0 and weight_decay >= 0");
  }
  if (batch_size == 0) throw ConfigError("batch_size must be > 0");
  if (calibration_batches == 0) throw ConfigError("calibration_batches must be > 0");
  if (activation_bits < 1) throw ConfigError("activation_bits must be >= 1");
  if (num_seeds == 0 || sweep_seeds == 0) throw ConfigError("seed counts must be > 0");
  if (split[0] <= 0 || split[2] <= 0 || split[1] < 0 ||
      std::abs(split[0] + split[1] + split[2] - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be non-negative, sum to 1, with train and test > 0");
  }
  if (sweep_axis != "lambda_fair" && sweep_axis != "lambda_baq_b" && sweep_axis != "baq_lr") {
    throw ConfigError("sweep axis must be lambda_fair, lambda_baq_b or baq_lr");
  }
}

std::string ExperimentConfig::digest() const { return sha256_hex(to_json().dump()); }

std::string ExperimentConfig::group_key() const {
  json doc = to_json();
  doc.erase("seed");
  doc.erase("output_dir");
  doc.erase("num_seeds");
  doc.erase("sweep");
  return sha256_hex(doc.dump());
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (part.empty()) throw ConfigError("bad override key '" + key + "'");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

ExperimentConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config " + path.string() + " is not valid JSON");
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return ExperimentConfig::from_json(doc);
}

// ---------------------------------------------------------------------------
// Seeds and construction

SeedSet derive_seeds(const ExperimentConfig& config, std::uint64_t root) {
  SeedSet s;
  s.data = config.data_seed ? *config.data_seed : derive_seed(root, "data");
  s.split = derive_seed(s.data, "split");
  s.init = derive_seed(root, "init");
  s.shuffle = derive_seed(root, "shuffle");
  s.calibration = derive_seed(root, "calibration");
  return s;
}

DatasetSpec resolved_dataset_spec(const ExperimentConfig& config, std::uint64_t root) {
  DatasetSpec spec = config.dataset;
  spec.seed = derive_seeds(config, root).data;
  return spec;
}

Network build_network(const ExperimentConfig& config, const Shape& input_shape,
                      int num_classes, std::uint64_t init_seed) {
  const json& layers_doc = config.network.is_null() ? default_network_json() : config.network;
  std::vector<Layer> layers;
  Shape shape = input_shape;
  try {
    for (const auto& l : layers_doc) {
      const LayerKind kind = parse_layer_kind(l.at("kind").get<std::string>());
      auto out_size = [&]() -> std::size_t {
        const json& o = l.at("out");
        if (o.is_string() && o.get<std::string>() == "classes") {
          return static_cast<std::size_t>(num_classes);
        }
        return o.get<std::size_t>();
      };
      switch (kind) {
        case LayerKind::kDense: {
          if (shape.size() != 1) throw ConfigError("dense layer needs a flat input");
          layers.push_back(Layer::dense(out_size(), shape[0], l.value("bias", true)));
          shape = {layers.back().weight.dim(0)};
          break;
        }
        case LayerKind::kConv2d: {
          if (shape.size() != 3) throw ConfigError("conv2d layer needs a [C, H, W] input");
          const std::size_t k = l.at("kernel").get<std::size_t>();
          const std::size_t stride = l.value("stride", std::size_t{1});
          const std::size_t pad = l.value("padding", std::size_t{0});
          if (stride == 0 || shape[1] + 2 * pad < k || shape[2] + 2 * pad < k) {
            throw ConfigError("conv2d kernel/stride/padding do not fit the input");
          }
          layers.push_back(Layer::conv2d(out_size(), shape[0], k, stride, pad, l.value("bias", true)));
          shape = {layers.back().weight.dim(0), (shape[1] + 2 * pad - k) / stride + 1,
                   (shape[2] + 2 * pad - k) / stride + 1};
          break;
        }
        case LayerKind::kRelu:
          layers.push_back(Layer::relu());
          break;
        case LayerKind::kFlatten:
          layers.push_back(Layer::flatten());
          shape = {shape_product(shape)};
          break;
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed network description: ") + e.what());
  }
  if (shape.size() != 1 || shape[0] != static_cast<std::size_t>(num_classes)) {
    throw ConfigError("network output " + shape_string(shape) + " does not match " +
                      std::to_string(num_classes) + " classes");
  }
  Network net(input_shape, std::move(layers));
  net.initialize(init_seed);
  return net;
}

TrainOptions finetune_options(const ExperimentConfig& config, const SeedSet& seeds) {
  TrainOptions o;
  o.epochs = config.epochs;
  o.batch_size = config.batch_size;
  o.weight_lr = config.weight_lr;
  o.weight_decay = config.weight_decay;
  o.logit_lr = config.logit_lr;
  o.loss.lambda_fair = config.lambda_fair;
  o.loss.lambda_baq_b = config.lambda_baq_b;
  o.b_min = config.b_min;
  o.b_max = config.b_max;
  o.granularity = config_granularity(config);
  o.shuffle_seed = seeds.shuffle;
  return o;
}

DatasetSplit prepare_data(const ExperimentConfig& config, const Dataset& dataset,
                          std::uint64_t root) {
  if (dataset.num_groups != config.dataset.num_groups) {
    throw ConfigError("dataset has " + std::to_string(dataset.num_groups) +
                      " groups but the config expects " +
                      std::to_string(config.dataset.num_groups));
  }
  return split(dataset, config.split, derive_seeds(config, root).split);
}

// ---------------------------------------------------------------------------
// RunResult

json RunResult::to_json() const {
  json traces_doc = json::array();
  for (const auto& t : traces) {
    json hist = json::object();
    for (const auto& [bits, n] : t.bit_histogram) hist[std::to_string(bits)] = n;
    traces_doc.push_back({{"epoch", t.epoch},
                          {"task", t.task},
                          {"fair", t.fair},
                          {"bitrate", t.bitrate},
                          {"total", t.total},
                          {"AvgBits", t.avg_bits},
                          {"bit_histogram", hist}});
  }
  return json{{"schema", kRunResultSchema},
              {"version", 1},
              {"mode", mode},
              {"seed", seed},
              {"config_digest", config_digest},
              {"group_key", group_key},
              {"config", config},
              {"metrics", metrics.to_json()},
              {"metric_details", metrics.details_json()},
              {"traces", traces_doc},
              {"assignment", assignment ? allocation_to_json(*assignment) : json(nullptr)},
              {"timing", {{"wall_clock_seconds", wall_clock_seconds}}}};
}

RunResult RunResult::from_json(const json& doc) {
  if (!doc.is_object() || doc.value("schema", "") != kRunResultSchema) {
    throw IoError("not a run result");
  }
  RunResult r;
  try {
    r.mode = doc.at("mode").get<std::string>();
    r.seed = doc.at("seed").get<std::uint64_t>();
    r.config_digest = doc.at("config_digest").get<std::string>();
    r.group_key = doc.at("group_key").get<std::string>();
    r.config = doc.at("config");
    json flat = doc.at("metrics");
    if (doc.contains("metric_details")) flat.update(doc.at("metric_details"));
    r.metrics = MetricsReport::from_json(flat);
    for (const auto& t : doc.at("traces")) {
      EpochRecord e;
      e.epoch = t.at("epoch").get<std::size_t>();
      e.task = t.at("task").get<double>();
      e.fair = t.at("fair").get<double>();
      e.bitrate = t.at("bitrate").get<double>();
      e.total = t.at("total").get<double>();
      e.avg_bits = t.at("AvgBits").get<double>();
      for (const auto& [bits, n] : t.at("bit_histogram").items()) {
        e.bit_histogram[std::stoi(bits)] = n.get<std::size_t>();
      }
      r.traces.push_back(std::move(e));
    }
    if (!doc.at("assignment").is_null()) r.assignment = allocation_from_json(doc.at("assignment"));
    r.wall_clock_seconds = doc.at("timing").value("wall_clock_seconds", 0.0);
  } catch (const json::exception& e) {
    throw IoError(std::string("corrupt run result: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("corrupt run result: ") + e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Stages

PretrainOutcome pretrain(const ExperimentConfig& config, const DatasetSplit& data,
                         std::uint64_t root) {
  const auto start = std::chrono::steady_clock::now();
  const SeedSet seeds = derive_seeds(config, root);
  Network net = build_network(config, data.train.feature_shape, data.train.num_classes, seeds.init);
  TrainOptions o = finetune_options(config, seeds);
  o.epochs = config.pretrain_epochs;
  o.weight_lr = config.pretrain_lr;
  o.loss.lambda_fair = 0.0;
  o.loss.lambda_baq_b = 0.0;
  o.shuffle_seed = derive_seed(root, "pretrain-shuffle");
  const TrainResult trained = train_full_precision(net, data.train, o);

  RunResult r = make_result(config, "fp32", root);
  r.metrics = evaluate(net, data.test, std::nullopt, config.activation_bits);
  r.traces = to_records(trained);
  r.wall_clock_seconds = seconds_since(start);
  return {std::move(net), std::move(r)};
}

CalibrationOutcome calibrate_allocate(const ExperimentConfig& config, Network& checkpoint,
                                      const DatasetSplit& data, std::uint64_t root) {
  if (data.train.num_groups != config.dataset.num_groups) {
    throw ConfigError("calibration data has " + std::to_string(data.train.num_groups) +
                      " groups, config expects " + std::to_string(config.dataset.num_groups));
  }
  const SeedSet seeds = derive_seeds(config, root);
  const auto stream = calibration_stream(data.train, config.batch_size,
                                         config.calibration_batches, seeds.calibration);
  const RawImportance raw = accumulate_importance(checkpoint, stream, config.calibration_batches,
                                                  data.train.num_groups);
  CalibrationOutcome out;
  out.scoped = aggregate_to_scopes(raw, config_granularity(config));
  out.reduced = reduce_groups(out.scoped);
  out.allocation = allocate(out.reduced, checkpoint, config.palette);
  return out;
}

RunOutcome run_mode(const ExperimentConfig& config, const Network& checkpoint,
                    const DatasetSplit& data, const std::optional<Allocation>& allocation,
                    std::uint64_t root) {
  const auto start = std::chrono::steady_clock::now();
  const Mode mode = Mode::parse(config.mode);
  const SeedSet seeds = derive_seeds(config, root);
  const TrainOptions options = finetune_options(config, seeds);
  const Granularity gran = options.granularity;
  if (needs_allocation(config, mode) && !allocation) {
    throw ConfigError("mode " + mode.name() + " needs an allocation");
  }

  Network net = checkpoint;
  RunResult r = make_result(config, mode.name(), root);
  std::optional<BitAssignment> final_bits;
  switch (mode.kind) {
    case ModeKind::kFp32:
      break;
    case ModeKind::kPtqUniform:
      final_bits = uniform_assignment(net, gran, mode.bits);
      break;
    case ModeKind::kUniformQat: {
      final_bits = uniform_assignment(net, gran, mode.bits);
      r.traces = to_records(train_qat(net, data.train, *final_bits, options));
      break;
    }
    case ModeKind::kFairQuantQat: {
      final_bits = allocation->assignment;
      r.traces = to_records(train_qat(net, data.train, *final_bits, options));
      break;
    }
    case ModeKind::kFairQuantBaq: {
      std::optional<BitAssignment> warm;
      if (config.baq_init == "warm-start") warm = allocation->assignment;
      const TrainResult trained = train_baq(net, data.train, warm, options);
      r.traces = to_records(trained);
      final_bits = trained.final_assignment;
      AllocationRecord rec;
      rec.origin = "baq";
      rec.assignment = *trained.final_assignment;
      rec.b_cont = trained.b_cont;
      r.assignment = rec;
      break;
    }
  }
  if (final_bits && !r.assignment) {
    AllocationRecord rec;
    rec.assignment = *final_bits;
    if (mode.kind == ModeKind::kFairQuantQat) {
      rec.palette = allocation->palette;
      rec.thresholds = allocation->thresholds;
    }
    r.assignment = rec;
  }
  r.metrics = evaluate(net, data.test, final_bits, config.activation_bits);
  r.wall_clock_seconds = seconds_since(start);
  return {std::move(net), std::move(r)};
}

// ---------------------------------------------------------------------------
// Commands

fs::path output_root(const ExperimentConfig& config) {
  if (!config.output_dir.empty()) return config.output_dir;
  if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
  return "fairmp-out";
}

fs::path seed_dir(const ExperimentConfig& config, std::uint64_t seed) {
  return output_root(config) / ("seed-" + std::to_string(seed));
}

GenerateDataOutput cmd_generate_data(const ExperimentConfig& config) {
  const DatasetSpec spec = resolved_dataset_spec(config, config.seed);
  const Dataset ds = generate_synthetic(spec);
  json meta = {{"generator", "synthetic"},
               {"spec", spec},
               {"balanced", spec.balanced()},
               {"config_digest", config.digest()}};
  const fs::path dir = output_root(config) / "data";
  GenerateDataOutput out;
  out.checksum = write_dataset(dir, ds, meta);
  out.manifest = dir / "manifest.csv";
  return out;
}

std::vector<fs::path> cmd_pretrain(const ExperimentConfig& config) {
  config.validate();
  std::vector<fs::path> written;
  for (std::uint64_t root : seed_list(config.seed, config.num_seeds)) {
    const DatasetSplit data = prepare_data(config, load_dataset(config, root), root);
    auto outcome = pretrain(config, data, root);
    const fs::path dir = seed_dir(config, root);
    save_network(outcome.network, dir / "checkpoint.json");
    write_json(dir / "pretrain.json", outcome.result.to_json());
    written.push_back(dir / "checkpoint.json");
  }
  return written;
}

std::vector<fs::path> cmd_calibrate_allocate(const ExperimentConfig& config) {
  config.validate();
  std::vector<fs::path> written;
  for (std::uint64_t root : seed_list(config.seed, config.num_seeds)) {
    const DatasetSplit data = prepare_data(config, load_dataset(config, root), root);
    const fs::path ckpt = seed_dir(config, root) / "checkpoint.json";
    if (!fs::exists(ckpt)) throw IoError("no checkpoint at " + ckpt.string() + "; run pretrain first");
    Network net = Network::load(ckpt);
    const auto cal = calibrate_allocate(config, net, data, root);
    write_calibration(config, root, cal);
    written.push_back(seed_dir(config, root) / "allocation.json");
  }
  return written;
}

std::vector<fs::path> cmd_run(const ExperimentConfig& config) {
  config.validate();
  const Mode mode = Mode::parse(config.mode);
  std::vector<fs::path> written;
  for (std::uint64_t root : seed_list(config.seed, config.num_seeds)) {
    const DatasetSplit data = prepare_data(config, load_dataset(config, root), root);
    Network ckpt = ensure_checkpoint(config, data, root);
    const auto allocation = ensure_allocation(config, mode, ckpt, data, root);
    const auto outcome = run_mode(config, ckpt, data, allocation, root);
    const fs::path path = output_root(config) / "runs" / mode.name() /
                          ("seed-" + std::to_string(root)) / "result.json";
    write_json(path, outcome.result.to_json());
    written.push_back(path);
  }
  return written;
}

SweepOutput cmd_sweep(const ExperimentConfig& config) {
  config.validate();
  const Mode mode = Mode::parse(config.mode);
  if ((config.sweep_axis == "lambda_baq_b" || config.sweep_axis == "baq_lr") &&
      mode.kind != ModeKind::kFairQuantBaq) {
    throw ConfigError("sweep axis " + config.sweep_axis + " needs mode fairquant-baq");
  }
  if (config.sweep_axis == "lambda_fair" && !mode.trains()) {
    throw ConfigError("sweep axis lambda_fair needs a training mode");
  }
  if (config.sweep_values.empty()) throw ConfigError("sweep needs at least one value");

  SweepOutput out;
  const fs::path base = output_root(config) / "sweeps" / config.sweep_axis;
  std::map<std::size_t, std::vector<MetricsReport>> reports;  // value index -> per seed
  std::map<std::size_t, std::size_t> failed;
  for (std::uint64_t root : seed_list(config.seed, config.sweep_seeds)) {
    const DatasetSplit data = prepare_data(config, load_dataset(config, root), root);
    Network ckpt = ensure_checkpoint(config, data, root);
    const auto allocation = ensure_allocation(config, mode, ckpt, data, root);
    for (std::size_t vi = 0; vi < config.sweep_values.size(); ++vi) {
      const double value = config.sweep_values[vi];
      ExperimentConfig c = config;
      if (c.sweep_axis == "lambda_fair") c.lambda_fair = value;
      if (c.sweep_axis == "lambda_baq_b") c.lambda_baq_b = value;
      if (c.sweep_axis == "baq_lr") c.logit_lr = value;
      try {
        c.validate();
        const auto outcome = run_mode(c, ckpt, data, allocation, root);
        const fs::path path = base / ("value-" + format_number(value)) /
                              ("seed-" + std::to_string(root)) / "result.json";
        write_json(path, outcome.result.to_json());
        out.results.push_back(path);
        reports[vi].push_back(outcome.result.metrics);
      } catch (const DivergenceError& e) {
        ++failed[vi];
        out.failures.push_back(config.sweep_axis + "=" + format_number(value) +
                               " seed=" + std::to_string(root) + ": " + e.what());
      } catch (const ConfigError& e) {
        ++failed[vi];
        out.failures.push_back(config.sweep_axis + "=" + format_number(value) +
                               " seed=" + std::to_string(root) + ": " + e.what());
      }
    }
  }

  std::ostringstream csv;
  const std::vector<std::pair<std::string, double MetricsReport::*>> cols = {
      {"AvgBits", &MetricsReport::avg_bits}, {"GBOPs", &MetricsReport::gbops},
      {"AvgAcc", &MetricsReport::avg_acc},   {"WorstAcc", &MetricsReport::worst_acc},
      {"Gap", &MetricsReport::gap},          {"EOpp0", &MetricsReport::eopp0},
      {"EOdd", &MetricsReport::eodd}};
  csv << "axis,value,n_ok,n_failed";
  for (const auto& [name, _] : cols) csv << ',' << name << "_mean," << name << "_ci95";
  csv << '\n';
  for (std::size_t vi = 0; vi < config.sweep_values.size(); ++vi) {
    const auto& rs = reports[vi];
    csv << config.sweep_axis << ',' << format_number(config.sweep_values[vi]) << ','
        << rs.size() << ',' << failed[vi];
    for (const auto& [name, member] : cols) {
      std::vector<double> xs;
      for (const auto& r : rs) xs.push_back(r.*member);
      if (xs.empty()) {
        csv << ",,";
      } else {
        csv << ',' << format_number(mean_of(xs)) << ',' << format_number(ci95_half_width(xs));
      }
    }
    csv << '\n';
  }
  out.csv = base / "sweep.csv";
  write_text(out.csv, csv.str());
  write_json(base / "failures.json", out.failures);
  return out;
}

std::string cmd_report(const fs::path& run_dir, std::vector<std::string>* warnings) {
  auto warn = [&](const std::string& w) {
    if (warnings) warnings->push_back(w);
  };
  std::vector<fs::path> files;
  std::error_code ec;
  if (fs::is_directory(run_dir, ec)) {
    for (const auto& entry : fs::recursive_directory_iterator(run_dir, ec)) {
      if (entry.is_regular_file() && entry.path().filename() == "result.json") {
        files.push_back(entry.path());
      }
    }
  } else {
    warn("not a directory: " + run_dir.string());
  }
  std::sort(files.begin(), files.end());

  std::map<std::string, std::vector<RunResult>> groups;
  for (const auto& f : files) {
    try {
      RunResult r = RunResult::from_json(read_json(f));
      groups[r.group_key].push_back(std::move(r));
    } catch (const Error& e) {
      warn("skipped " + f.string() + ": " + e.what());
    }
  }
  if (groups.empty()) warn("no run results under " + run_dir.string());

  struct Row {
    std::string mode;
    double avg_bits;
    std::string key;
    std::string text;
  };
  std::vector<Row> rows;
  auto pct = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v);
    return std::string(buf);
  };
  for (const auto& [key, runs] : groups) {
    auto collect = [&](double MetricsReport::*m) {
      std::vector<double> xs;
      for (const auto& r : runs) xs.push_back(r.metrics.*m);
      return xs;
    };
    auto with_sd = [&](double MetricsReport::*m) {
      const auto xs = collect(m);
      return pct(mean_of(xs)) + " ± " + pct(stddev_of(xs));
    };
    const double bits = mean_of(collect(&MetricsReport::avg_bits));
    char head[128];
    std::snprintf(head, sizeof(head), "| %s | %s | %.2f | %.4f |", runs.front().mode.c_str(),
                  key.substr(0, 8).c_str(), bits, mean_of(collect(&MetricsReport::gbops)));
    std::string text = head;
    text += " " + with_sd(&MetricsReport::avg_acc) + " | " + with_sd(&MetricsReport::worst_acc) +
            " | " + with_sd(&MetricsReport::gap) + " | " + with_sd(&MetricsReport::eopp0) + " | " +
            with_sd(&MetricsReport::eodd) + " | " + std::to_string(runs.size()) + " |";
    rows.push_back({runs.front().mode, bits, key, text});
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::tie(a.mode, a.avg_bits, a.key) < std::tie(b.mode, b.avg_bits, b.key);
  });

  std::string table =
      "| Mode | Config | AvgBits | GBOPs | AvgAcc | WorstAcc | Gap | EOpp0 | EOdd | Seeds |\n"
      "|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows) table += r.text + "\n";
  return table;
}

// ---------------------------------------------------------------------------
// Statistics

double mean_of(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

double stddev_of(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  const double m = mean_of(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

double ci95_half_width(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  const boost::math::students_t dist(static_cast<double>(values.size() - 1));
  return boost::math::quantile(dist, 0.975) * stddev_of(values) /
         std::sqrt(static_cast<double>(values.size()));
}

}  // namespace fairmp
