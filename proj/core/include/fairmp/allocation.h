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

#ifndef FAIRMP_ALLOCATION_H_
#define FAIRMP_ALLOCATION_H_

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairmp/importance.h"
#include "fairmp/net.h"
#include "fairmp/quantizer.h"

namespace fairmp {

// Admissible bit-widths b_1 < ... < b_K with target proportions summing to 1.
struct BitPalette {
  std::vector<int> bits;
  std::vector<double> proportions;

  void validate() const;
  bool operator==(const BitPalette&) const = default;
};

// One bit-width per scope, in enumerate_scopes() order.
struct BitAssignment {
  Granularity granularity = Granularity::kPerChannel;
  std::vector<Scope> scopes;
  std::vector<int> bits;

  QuantPlan to_plan() const;
  std::map<int, std::size_t> histogram() const;
  bool operator==(const BitAssignment&) const = default;
};

BitAssignment uniform_assignment(const Network& network, Granularity granularity,
                                 int bits);

// Concatenates per-layer reduced maps in scope order. Throws ShapeError when
// a layer is missing or its scope count differs.
std::vector<double> flatten_importance(const ReducedImportance& reduced,
                                       std::span<const Scope> scopes);

// Linear interpolation between order statistics at index tau * (M - 1).
double empirical_quantile(std::span<const double> values, double tau);

// t_k = quantile of v at the cumulative proportion c_k, k = 1..K-1.
std::vector<double> quantile_thresholds(std::span<const double> values,
                                        const BitPalette& palette);

// v <= t_1 -> b_1; t_{k-1} < v <= t_k -> b_k; v > t_{K-1} -> b_K.
std::vector<int> tier_assign(std::span<const double> values,
                             std::span<const double> thresholds,
                             const BitPalette& palette);

// Parameter-count-weighted mean bit-width.
double average_bits(const BitAssignment& assignment);

struct Allocation {
  BitAssignment assignment;
  BitPalette palette;
  std::vector<double> thresholds;
  double avg_bits = 0.0;
};

Allocation allocate(const ReducedImportance& reduced, const Network& network,
                    const BitPalette& palette);

// Clamp applied to the atanh argument when a scope sits at b_max.
inline constexpr double kWarmStartDelta = 1e-6;

// atanh((a - b_min) / (b_max - b_min)), argument clamped to 1 - delta.
double warm_start_logit(int bits, int b_min, int b_max,
                        double delta = kWarmStartDelta);
std::vector<double> warm_start_logits(const BitAssignment& assignment, int b_min,
                                      int b_max, double delta = kWarmStartDelta);

// Assignment JSON: ordered {layer_id, channel, bits, size} records plus the
// palette, thresholds and AvgBits. Learned assignments carry origin "baq"
// and their final continuous bit values.
struct AllocationRecord {
  std::string origin = "static";
  BitAssignment assignment;
  std::optional<BitPalette> palette;
  std::vector<double> thresholds;
  std::vector<double> b_cont;
};

nlohmann::json allocation_to_json(const AllocationRecord& record);
AllocationRecord allocation_from_json(const nlohmann::json& doc);

}  // namespace fairmp

#endif  // FAIRMP_ALLOCATION_H_
