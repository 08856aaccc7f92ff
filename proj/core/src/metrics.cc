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

#include "fairmp/metrics.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fairmp/errors.h"

namespace fairmp {
namespace {

using nlohmann::json;

struct ClassRates {
  std::uint64_t positives = 0;
  std::uint64_t true_positives = 0;
  std::uint64_t negatives = 0;
  std::uint64_t false_positives = 0;
};

ClassRates one_vs_rest(const GroupedConfusion& conf, std::size_t group, std::size_t cls) {
  ClassRates r;
  for (std::size_t t = 0; t < conf.num_classes(); ++t) {
    for (std::size_t p = 0; p < conf.num_classes(); ++p) {
      const std::uint64_t n = conf.count(group, t, p);
      if (t == cls) {
        r.positives += n;
        if (p == cls) r.true_positives += n;
      } else {
        r.negatives += n;
        if (p == cls) r.false_positives += n;
      }
    }
  }
  return r;
}

std::vector<std::size_t> populated_groups(const GroupedConfusion& conf) {
  std::vector<std::size_t> out;
  for (std::size_t g = 0; g < conf.num_groups(); ++g) {
    if (conf.group_total(g) > 0) out.push_back(g);
  }
  return out;
}

double ratio(std::uint64_t num, std::uint64_t den) {
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

GroupedConfusion::GroupedConfusion(std::size_t num_classes, std::size_t num_groups)
    : classes_(num_classes),
      groups_(num_groups),
      counts_(num_classes * num_classes * num_groups, 0) {}

std::uint64_t GroupedConfusion::count(std::size_t group, std::size_t truth,
                                      std::size_t predicted) const {
  return counts_.at((group * classes_ + truth) * classes_ + predicted);
}

void GroupedConfusion::add(std::size_t group, std::size_t truth, std::size_t predicted,
                           std::uint64_t n) {
  counts_.at((group * classes_ + truth) * classes_ + predicted) += n;
}

std::uint64_t GroupedConfusion::group_total(std::size_t group) const {
  const auto begin = counts_.begin() + static_cast<std::ptrdiff_t>(group * classes_ * classes_);
  return std::accumulate(begin, begin + static_cast<std::ptrdiff_t>(classes_ * classes_),
                         std::uint64_t{0});
}

std::uint64_t GroupedConfusion::group_correct(std::size_t group) const {
  std::uint64_t n = 0;
  for (std::size_t c = 0; c < classes_; ++c) n += count(group, c, c);
  return n;
}

std::uint64_t GroupedConfusion::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

GroupedConfusion confusion_by_group(std::span<const int> predictions,
                                    std::span<const int> labels,
                                    std::span<const int> groups, std::size_t num_classes,
                                    std::size_t num_groups) {
  if (predictions.size() != labels.size() || labels.size() != groups.size()) {
    throw ShapeError("confusion_by_group: predictions, labels and groups differ in length");
  }
  GroupedConfusion conf(num_classes, num_groups);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int p = predictions[i], y = labels[i], g = groups[i];
    if (p < 0 || y < 0 || static_cast<std::size_t>(p) >= num_classes ||
        static_cast<std::size_t>(y) >= num_classes) {
      throw ShapeError("sample " + std::to_string(i) + " has class outside [0, " +
                       std::to_string(num_classes) + ")");
    }
    if (g < 0 || static_cast<std::size_t>(g) >= num_groups) {
      throw ShapeError("sample " + std::to_string(i) + " has group outside [0, " +
                       std::to_string(num_groups) + ")");
    }
    conf.add(static_cast<std::size_t>(g), static_cast<std::size_t>(y),
             static_cast<std::size_t>(p));
  }
  return conf;
}

AccuracyReport accuracy_metrics(const GroupedConfusion& conf) {
  const std::uint64_t total = conf.total();
  if (total == 0) throw Error("accuracy metrics need at least one sample");
  AccuracyReport r;
  std::uint64_t correct = 0;
  double lo = 1.0, hi = 0.0;
  for (std::size_t g = 0; g < conf.num_groups(); ++g) {
    const std::uint64_t n = conf.group_total(g);
    correct += conf.group_correct(g);
    if (n == 0) {
      r.per_group.emplace_back();
      r.empty_groups.push_back(g);
      continue;
    }
    const double acc = ratio(conf.group_correct(g), n);
    r.per_group.emplace_back(acc);
    lo = std::min(lo, acc);
    hi = std::max(hi, acc);
  }
  r.avg = ratio(correct, total);
  r.worst = lo;
  r.gap = hi - lo;
  return r;
}

ClassGap eopp0(const GroupedConfusion& conf) {
  ClassGap out;
  const auto groups = populated_groups(conf);
  if (groups.size() < 2) return out;
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < conf.num_classes(); ++c) {
    double lo = 1.0, hi = 0.0;
    bool defined = true;
    for (std::size_t g : groups) {
      const ClassRates r = one_vs_rest(conf, g, c);
      if (r.negatives == 0) {
        defined = false;
        break;
      }
      const double tnr = ratio(r.negatives - r.false_positives, r.negatives);
      lo = std::min(lo, tnr);
      hi = std::max(hi, tnr);
    }
    if (!defined) {
      out.skipped_classes.push_back(c);
      continue;
    }
    sum += hi - lo;
    ++used;
  }
  out.value = used ? sum / static_cast<double>(used) : 0.0;
  return out;
}

ClassGap eodd(const GroupedConfusion& conf) {
  ClassGap out;
  const auto groups = populated_groups(conf);
  if (groups.size() < 2) return out;
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < conf.num_classes(); ++c) {
    std::vector<std::pair<double, double>> rates;  // (TPR, FPR)
    bool defined = true;
    for (std::size_t g : groups) {
      const ClassRates r = one_vs_rest(conf, g, c);
      if (r.positives == 0 || r.negatives == 0) {
        defined = false;
        break;
      }
      rates.emplace_back(ratio(r.true_positives, r.positives),
                         ratio(r.false_positives, r.negatives));
    }
    if (!defined) {
      out.skipped_classes.push_back(c);
      continue;
    }
    double worst = 0.0;
    for (std::size_t a = 0; a < rates.size(); ++a) {
      for (std::size_t b = a + 1; b < rates.size(); ++b) {
        worst = std::max(worst, 0.5 * (std::abs(rates[a].first - rates[b].first) +
                                       std::abs(rates[a].second - rates[b].second)));
      }
    }
    sum += worst;
    ++used;
  }
  out.value = used ? sum / static_cast<double>(used) : 0.0;
  return out;
}

double gbops(const Network& network, const Shape& input_shape,
             const BitAssignment& assignment, int activation_bits) {
  const auto shapes = network.output_shapes(input_shape);
  std::map<std::size_t, std::size_t> next_in_layer;
  double bit_ops = 0.0;
  for (std::size_t k = 0; k < assignment.scopes.size(); ++k) {
    const Scope& s = assignment.scopes[k];
    if (s.layer_id >= network.num_layers() || !network.layer(s.layer_id).has_params()) {
      throw ShapeError("assignment names layer " + std::to_string(s.layer_id) +
                       ", which has no weights");
    }
    const Layer& layer = network.layer(s.layer_id);
    const Shape& w = layer.weight.shape();
    double macs_per_channel = static_cast<double>(w[1]);
    if (layer.kind == LayerKind::kConv2d) {
      const Shape& out = shapes[s.layer_id];
      macs_per_channel = static_cast<double>(w[1] * w[2] * w[3] * out[1] * out[2]);
    }
    const double channels = s.channel ? 1.0 : static_cast<double>(w[0]);
    bit_ops += macs_per_channel * channels * assignment.bits[k] * activation_bits;
  }
  return bit_ops / 1e9;
}

json MetricsReport::to_json() const {
  return json{{"AvgBits", avg_bits}, {"GBOPs", gbops},     {"AvgAcc", avg_acc},
              {"WorstAcc", worst_acc}, {"Gap", gap},       {"EOpp0", eopp0},
              {"EOdd", eodd}};
}

json MetricsReport::details_json() const {
  json per_group = json::array();
  for (const auto& a : per_group_acc) per_group.push_back(a ? json(*a) : json(nullptr));
  return json{{"per_group_acc", per_group},
              {"empty_groups", empty_groups},
              {"eopp0_skipped_classes", eopp0_skipped},
              {"eodd_skipped_classes", eodd_skipped},
              {"gap_definitions", kGapDefinitions}};
}

MetricsReport MetricsReport::from_json(const json& flat) {
  MetricsReport r;
  r.avg_bits = flat.at("AvgBits").get<double>();
  r.gbops = flat.at("GBOPs").get<double>();
  r.avg_acc = flat.at("AvgAcc").get<double>();
  r.worst_acc = flat.at("WorstAcc").get<double>();
  r.gap = flat.at("Gap").get<double>();
  r.eopp0 = flat.at("EOpp0").get<double>();
  r.eodd = flat.at("EOdd").get<double>();
  return r;
}

MetricsReport evaluate(const Network& network, const Dataset& data,
                       const std::optional<BitAssignment>& assignment, int activation_bits,
                       std::size_t batch_size) {
  QuantPlan plan;
  if (assignment) plan = assignment->to_plan();
  std::vector<int> predictions;
  predictions.reserve(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    const Batch batch = data.gather(idx);
    const Tensor logits = network.predict(batch.features, assignment ? &plan : nullptr);
    const std::size_t c = logits.dim(1);
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const double* row = &logits.values()[s * c];
      predictions.push_back(static_cast<int>(std::max_element(row, row + c) - row));
    }
  }
  const auto conf = confusion_by_group(predictions, data.labels, data.groups,
                                       static_cast<std::size_t>(data.num_classes),
                                       static_cast<std::size_t>(data.num_groups));
  const auto acc = accuracy_metrics(conf);
  const auto opp = eopp0(conf);
  const auto odd = eodd(conf);
  const BitAssignment bits = assignment ? *assignment
                                        : uniform_assignment(network, Granularity::kPerChannel, 32);
  MetricsReport r;
  r.avg_bits = average_bits(bits);
  r.gbops = gbops(network, network.input_shape(), bits, activation_bits);
  r.avg_acc = acc.avg;
  r.worst_acc = acc.worst;
  r.gap = acc.gap;
  r.eopp0 = opp.value;
  r.eodd = odd.value;
  r.per_group_acc = acc.per_group;
  r.empty_groups = acc.empty_groups;
  r.eopp0_skipped = opp.skipped_classes;
  r.eodd_skipped = odd.skipped_classes;
  return r;
}

}  // namespace fairmp
