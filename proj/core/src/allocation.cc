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

#include "fairmp/allocation.h"

#include <algorithm>
#include <cmath>

#include "fairmp/errors.h"

namespace fairmp {

using nlohmann::json;

void BitPalette::validate() const {
  if (bits.empty()) throw ConfigError("bit palette is empty");
  if (proportions.size() != bits.size()) {
    throw ConfigError("palette has " + std::to_string(bits.size()) + " bit-widths but " +
                      std::to_string(proportions.size()) + " proportions");
  }
  for (std::size_t k = 0; k < bits.size(); ++k) {
    if (bits[k] < 2) throw ConfigError("palette bit-widths must be >= 2");
    if (k > 0 && bits[k] <= bits[k - 1]) {
      throw ConfigError("palette bit-widths must be strictly increasing");
    }
  }
  double sum = 0.0;
  for (double p : proportions) {
    if (!(p >= 0.0)) throw ConfigError("palette proportions must be non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12) {
    throw ConfigError("palette proportions sum to " + std::to_string(sum) + ", not 1");
  }
}

QuantPlan BitAssignment::to_plan() const {
  QuantPlan plan;
  plan.granularity = granularity;
  for (std::size_t k = 0; k < scopes.size(); ++k) {
    plan.bits[scopes[k].layer_id].push_back(bits[k]);
  }
  return plan;
}

std::map<int, std::size_t> BitAssignment::histogram() const {
  std::map<int, std::size_t> hist;
  for (int b : bits) ++hist[b];
  return hist;
}

BitAssignment uniform_assignment(const Network& network, Granularity granularity,
                                 int bits) {
  qmax_for_bits(bits);  // validates
  BitAssignment a;
  a.granularity = granularity;
  a.scopes = enumerate_scopes(network, granularity);
  a.bits.assign(a.scopes.size(), bits);
  return a;
}

std::vector<double> flatten_importance(const ReducedImportance& reduced,
                                       std::span<const Scope> scopes) {
  std::vector<double> v;
  v.reserve(scopes.size());
  std::map<std::size_t, std::size_t> consumed;
  for (const Scope& s : scopes) {
    const auto it = reduced.layers.find(s.layer_id);
    if (it == reduced.layers.end()) {
      throw ShapeError("importance map is missing layer " + std::to_string(s.layer_id));
    }
    std::size_t& pos = consumed[s.layer_id];
    if (pos >= it->second.size()) {
      throw ShapeError("importance map for layer " + std::to_string(s.layer_id) +
                       " has fewer values than the layer has scopes");
    }
    v.push_back(it->second[pos++]);
  }
  for (const auto& [id, count] : consumed) {
    if (count != reduced.layers.at(id).size()) {
      throw ShapeError("importance map for layer " + std::to_string(id) +
                       " has more values than the layer has scopes");
    }
  }
  return v;
}

double empirical_quantile(std::span<const double> values, double tau) {
  if (values.empty()) throw ShapeError("quantile of an empty vector");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double h = std::clamp(tau, 0.0, 1.0) * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::vector<double> quantile_thresholds(std::span<const double> values,
                                        const BitPalette& palette) {
  palette.validate();
  std::vector<double> thresholds;
  double cumulative = 0.0;
  for (std::size_t k = 0; k + 1 < palette.bits.size(); ++k) {
    cumulative += palette.proportions[k];
    thresholds.push_back(empirical_quantile(values, std::min(cumulative, 1.0)));
  }
  return thresholds;
}

std::vector<int> tier_assign(std::span<const double> values,
                             std::span<const double> thresholds,
                             const BitPalette& palette) {
  if (thresholds.size() + 1 != palette.bits.size()) {
    throw ShapeError("tier_assign needs K-1 thresholds for a K-entry palette");
  }
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) {
    throw ShapeError("tier thresholds must be non-decreasing");
  }
  std::vector<int> bits;
  bits.reserve(values.size());
  for (double v : values) {
    const auto tier = static_cast<std::size_t>(
        std::lower_bound(thresholds.begin(), thresholds.end(), v) - thresholds.begin());
    bits.push_back(palette.bits[tier]);
  }
  return bits;
}

double average_bits(const BitAssignment& assignment) {
  double weighted = 0.0, total = 0.0;
  for (std::size_t k = 0; k < assignment.scopes.size(); ++k) {
    const auto size = static_cast<double>(assignment.scopes[k].size);
    weighted += size * assignment.bits[k];
    total += size;
  }
  return total > 0.0 ? weighted / total : 0.0;
}

Allocation allocate(const ReducedImportance& reduced, const Network& network,
                    const BitPalette& palette) {
  palette.validate();
  Allocation out;
  out.palette = palette;
  out.assignment.granularity = reduced.granularity;
  out.assignment.scopes = enumerate_scopes(network, reduced.granularity);
  const auto v = flatten_importance(reduced, out.assignment.scopes);
  out.thresholds = quantile_thresholds(v, palette);
  out.assignment.bits = tier_assign(v, out.thresholds, palette);
  out.avg_bits = average_bits(out.assignment);
  return out;
}

double warm_start_logit(int bits, int b_min, int b_max, double delta) {
  if (b_min < 2 || b_min >= b_max) {
    throw ConfigError("bit range needs 2 <= b_min < b_max");
  }
  if (bits < b_min || bits > b_max) {
    throw ConfigError("warm-start bit-width " + std::to_string(bits) + " outside [" +
                      std::to_string(b_min) + ", " + std::to_string(b_max) + "]");
  }
  const double x = static_cast<double>(bits - b_min) / static_cast<double>(b_max - b_min);
  return std::atanh(std::min(x, 1.0 - delta));
}

std::vector<double> warm_start_logits(const BitAssignment& assignment, int b_min,
                                      int b_max, double delta) {
  std::vector<double> logits;
  logits.reserve(assignment.bits.size());
  for (int b : assignment.bits) logits.push_back(warm_start_logit(b, b_min, b_max, delta));
  return logits;
}

json allocation_to_json(const AllocationRecord& record) {
  const BitAssignment& a = record.assignment;
  json scopes = json::array();
  for (std::size_t k = 0; k < a.scopes.size(); ++k) {
    const Scope& s = a.scopes[k];
    scopes.push_back(json{{"layer_id", s.layer_id},
                          {"channel", s.channel ? json(*s.channel) : json("whole-tensor")},
                          {"bits", a.bits[k]},
                          {"size", s.size}});
  }
  json doc{{"origin", record.origin},
           {"granularity", granularity_name(a.granularity)},
           {"scopes", std::move(scopes)},
           {"thresholds", record.thresholds},
           {"AvgBits", average_bits(a)}};
  doc["palette"] = record.palette ? json{{"bits", record.palette->bits},
                                         {"proportions", record.palette->proportions}}
                                  : json(nullptr);
  if (!record.b_cont.empty()) doc["b_cont"] = record.b_cont;
  return doc;
}

AllocationRecord allocation_from_json(const json& doc) {
  try {
    AllocationRecord record;
    record.origin = doc.at("origin").get<std::string>();
    record.assignment.granularity = parse_granularity(doc.at("granularity").get<std::string>());
    std::map<std::size_t, std::size_t> offsets;
    for (const json& entry : doc.at("scopes")) {
      Scope s;
      s.layer_id = entry.at("layer_id").get<std::size_t>();
      if (entry.at("channel").is_number()) s.channel = entry.at("channel").get<std::size_t>();
      s.size = entry.at("size").get<std::size_t>();
      s.offset = offsets[s.layer_id];
      offsets[s.layer_id] += s.size;
      record.assignment.scopes.push_back(s);
      record.assignment.bits.push_back(entry.at("bits").get<int>());
    }
    record.thresholds = doc.value("thresholds", std::vector<double>{});
    if (doc.contains("palette") && !doc["palette"].is_null()) {
      record.palette = BitPalette{doc["palette"].at("bits").get<std::vector<int>>(),
                                  doc["palette"].at("proportions").get<std::vector<double>>()};
    }
    record.b_cont = doc.value("b_cont", std::vector<double>{});
    return record;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed allocation document: ") + e.what());
  }
}

}  // namespace fairmp
