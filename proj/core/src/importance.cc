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

#include "fairmp/importance.h"

#include <algorithm>
#include <string>

#include "fairmp/errors.h"
#include "fairmp/loss.h"

namespace fairmp {

using nlohmann::json;

std::optional<double> group_batch_loss(const Network& network, const Batch& batch,
                                       int group, const QuantPlan* plan) {
  std::size_t members = 0;
  for (int g : batch.groups) members += g == group ? 1 : 0;
  if (members == 0) return std::nullopt;
  const auto ce = per_sample_cross_entropy(network.predict(batch.features, plan),
                                           batch.labels);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch.groups[i] == group) total += ce.losses[i];
  }
  return total / static_cast<double>(members);
}

RawImportance accumulate_importance(Network& network, std::span<const Batch> stream,
                                    std::size_t num_batches, int num_groups) {
  if (num_batches == 0) throw ConfigError("calibration needs at least one batch");
  if (num_batches > stream.size()) {
    throw ConfigError("calibration asks for " + std::to_string(num_batches) +
                      " batches, stream holds " + std::to_string(stream.size()));
  }
  RawImportance raw;
  raw.num_groups = num_groups;
  raw.num_batches = num_batches;
  const auto layer_ids = network.quantizable_layers();
  for (std::size_t id : layer_ids) {
    raw.layers[id].assign(static_cast<std::size_t>(num_groups),
                          Tensor(network.layer(id).weight.shape()));
  }
  // Position of every layer's weight gradient in Gradients::params.
  std::map<std::size_t, std::size_t> weight_slot;
  const auto refs = network.param_refs();
  for (std::size_t k = 0; k < refs.size(); ++k) {
    if (!refs[k].is_bias) weight_slot[refs[k].layer_id] = k;
  }

  for (std::size_t j = 0; j < num_batches; ++j) {
    const Batch& batch = stream[j];
    for (int g : batch.groups) {
      if (g < 0 || g >= num_groups) {
        throw ConfigError("calibration batch holds group " + std::to_string(g) +
                          " but " + std::to_string(num_groups) + " groups were declared");
      }
    }
    const Tensor logits = network.forward(batch.features);
    const auto ce = per_sample_cross_entropy(logits, batch.labels);
    for (int g = 0; g < num_groups; ++g) {
      std::size_t members = 0;
      for (int gi : batch.groups) members += gi == g ? 1 : 0;
      if (members == 0) continue;
      std::vector<double> weights(batch.size(), 0.0);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        if (batch.groups[i] == g) weights[i] = 1.0 / static_cast<double>(members);
      }
      const Gradients grads =
          network.backward(weighted_cross_entropy_grad(ce, batch.labels, weights));
      for (std::size_t id : layer_ids) {
        const Tensor& dw = grads.params[weight_slot.at(id)];
        const Tensor& w = network.layer(id).weight;
        Tensor& acc = raw.layers[id][static_cast<std::size_t>(g)];
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double t = dw[i] * w[i];
          acc[i] += t * t;
        }
      }
    }
  }
  return raw;
}

ScopeImportance aggregate_to_scopes(const RawImportance& raw, Granularity granularity) {
  ScopeImportance scoped;
  scoped.granularity = granularity;
  scoped.num_groups = raw.num_groups;
  scoped.num_batches = raw.num_batches;
  for (const auto& [id, per_group] : raw.layers) {
    auto& out = scoped.layers[id];
    for (const Tensor& t : per_group) {
      std::vector<double> values;
      for (const Scope& s : layer_scopes(id, t.shape(), granularity)) {
        double sum = 0.0;
        for (std::size_t i = s.offset; i < s.offset + s.size; ++i) sum += t[i];
        values.push_back(sum / static_cast<double>(s.size));
      }
      out.push_back(std::move(values));
    }
  }
  return scoped;
}

ReducedImportance reduce_groups(const ScopeImportance& scoped, double eps) {
  const auto groups = static_cast<std::size_t>(scoped.num_groups);
  ReducedImportance reduced;
  reduced.granularity = scoped.granularity;
  reduced.num_batches = scoped.num_batches;
  reduced.group_mass.assign(groups, 0.0);
  for (const auto& [id, per_group] : scoped.layers) {
    if (per_group.size() != groups) {
      throw ShapeError("layer " + std::to_string(id) + " has " +
                       std::to_string(per_group.size()) + " group maps, expected " +
                       std::to_string(groups));
    }
    for (std::size_t g = 0; g < groups; ++g) {
      if (per_group[g].size() != per_group[0].size()) {
        throw ShapeError("groups disagree on the scope count of layer " + std::to_string(id));
      }
      for (double v : per_group[g]) reduced.group_mass[g] += std::abs(v);
    }
  }
  for (const auto& [id, per_group] : scoped.layers) {
    std::vector<double> out(groups == 0 ? 0 : per_group[0].size(), 0.0);
    for (std::size_t g = 0; g < groups; ++g) {
      const double norm = eps + reduced.group_mass[g];
      for (std::size_t k = 0; k < out.size(); ++k) {
        out[k] = std::max(out[k], per_group[g][k] / norm);
      }
    }
    reduced.layers[id] = std::move(out);
  }
  return reduced;
}

json importance_to_json(const ScopeImportance& scoped, const ReducedImportance& reduced) {
  json group_maps = json::object();
  for (const auto& [id, per_group] : scoped.layers) {
    json entry = json::object();
    for (std::size_t g = 0; g < per_group.size(); ++g) entry[std::to_string(g)] = per_group[g];
    group_maps[std::to_string(id)] = std::move(entry);
  }
  json reduced_maps = json::object();
  for (const auto& [id, values] : reduced.layers) reduced_maps[std::to_string(id)] = values;
  return json{{"granularity", granularity_name(scoped.granularity)},
              {"num_batches", scoped.num_batches},
              {"num_groups", scoped.num_groups},
              {"group_mass", reduced.group_mass},
              {"group_maps", std::move(group_maps)},
              {"reduced", std::move(reduced_maps)}};
}

ReducedImportance reduced_importance_from_json(const json& doc) {
  try {
    ReducedImportance reduced;
    reduced.granularity = parse_granularity(doc.at("granularity").get<std::string>());
    reduced.num_batches = doc.at("num_batches").get<std::size_t>();
    reduced.group_mass = doc.at("group_mass").get<std::vector<double>>();
    for (const auto& [key, values] : doc.at("reduced").items()) {
      reduced.layers[std::stoul(key)] = values.get<std::vector<double>>();
    }
    return reduced;
  } catch (const std::exception& e) {
    throw IoError(std::string("malformed importance document: ") + e.what());
  }
}

}  // namespace fairmp
