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

#ifndef FAIRMP_IMPORTANCE_H_
#define FAIRMP_IMPORTANCE_H_

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairmp/data.h"
#include "fairmp/net.h"
#include "fairmp/quantizer.h"

namespace fairmp {

// Mean cross-entropy over the members of `group` in `batch`; empty when the
// batch holds no such member.
std::optional<double> group_batch_loss(const Network& network, const Batch& batch,
                                       int group, const QuantPlan* plan = nullptr);

// Elementwise importance sum_j (dL_g^(j)/dW_l * W_l)^2 for every quantizable
// layer l and group g, shaped like the layer's weight.
struct RawImportance {
  int num_groups = 0;
  std::size_t num_batches = 0;
  std::map<std::size_t, std::vector<Tensor>> layers;  // layer -> [group]
};

// Runs one backward pass per (batch, group) with the group-restricted loss.
// The network's parameters are not modified. Batches without members of a
// group contribute nothing for that group.
RawImportance accumulate_importance(Network& network, std::span<const Batch> stream,
                                    std::size_t num_batches, int num_groups);

// Importance averaged over each scope: per output channel, or over the
// whole tensor.
struct ScopeImportance {
  Granularity granularity = Granularity::kPerChannel;
  int num_groups = 0;
  std::size_t num_batches = 0;
  std::map<std::size_t, std::vector<std::vector<double>>> layers;  // layer -> [group][scope]
};

ScopeImportance aggregate_to_scopes(const RawImportance& raw, Granularity granularity);

// Cross-group reduction: each group's map is divided by (eps + s_g), where
// s_g is its L1 mass over all layers, then the elementwise max over groups
// is taken.
struct ReducedImportance {
  Granularity granularity = Granularity::kPerChannel;
  std::size_t num_batches = 0;
  std::vector<double> group_mass;                   // s_g
  std::map<std::size_t, std::vector<double>> layers;  // layer -> [scope]
};

inline constexpr double kImportanceEpsilon = 1e-8;

ReducedImportance reduce_groups(const ScopeImportance& scoped,
                                double eps = kImportanceEpsilon);

nlohmann::json importance_to_json(const ScopeImportance& scoped,
                                  const ReducedImportance& reduced);
ReducedImportance reduced_importance_from_json(const nlohmann::json& doc);

}  // namespace fairmp

#endif  // FAIRMP_IMPORTANCE_H_
