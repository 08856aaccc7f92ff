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

#ifndef FAIRMP_METRICS_H_
#define FAIRMP_METRICS_H_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairmp/allocation.h"
#include "fairmp/data.h"
#include "fairmp/net.h"

namespace fairmp {

// Per-group C x C confusion counts; rows are true classes, columns predictions.
class GroupedConfusion {
 public:
  GroupedConfusion(std::size_t num_classes, std::size_t num_groups);

  std::size_t num_classes() const noexcept { return classes_; }
  std::size_t num_groups() const noexcept { return groups_; }

  std::uint64_t count(std::size_t group, std::size_t truth, std::size_t predicted) const;
  void add(std::size_t group, std::size_t truth, std::size_t predicted,
           std::uint64_t n = 1);
  std::uint64_t group_total(std::size_t group) const;
  std::uint64_t group_correct(std::size_t group) const;
  std::uint64_t total() const;

  bool operator==(const GroupedConfusion&) const = default;

 private:
  std::size_t classes_;
  std::size_t groups_;
  std::vector<std::uint64_t> counts_;  // [group][truth][predicted]
};

GroupedConfusion confusion_by_group(std::span<const int> predictions,
                                    std::span<const int> labels,
                                    std::span<const int> groups, std::size_t num_classes,
                                    std::size_t num_groups);

struct AccuracyReport {
  double avg = 0.0;    // pooled over every sample
  double worst = 0.0;  // min over groups with samples
  double gap = 0.0;    // max - min over groups with samples
  std::vector<std::optional<double>> per_group;
  std::vector<std::size_t> empty_groups;
};

AccuracyReport accuracy_metrics(const GroupedConfusion& confusion);

// A gap averaged over classes; classes whose rates are undefined in some
// group are skipped and listed.
struct ClassGap {
  double value = 0.0;
  std::vector<std::size_t> skipped_classes;
};

// Mean over classes of the max pairwise group difference in one-vs-rest
// true-negative rate.
ClassGap eopp0(const GroupedConfusion& confusion);

// Mean over classes of the max pairwise 0.5 (|dTPR| + |dFPR|), one-vs-rest.
ClassGap eodd(const GroupedConfusion& confusion);

inline constexpr const char* kGapDefinitions =
    "EOpp0: mean over classes of max pairwise group gap in one-vs-rest TNR; "
    "EOdd: mean over classes of max pairwise 0.5*(|dTPR|+|dFPR|); classes with "
    "undefined rates in any group are skipped";

// Sum over quantised scopes of MACs(scope) * weight bits * activation bits,
// in units of 1e9. Conv MACs per output channel: C_in*K_h*K_w*H_out*W_out;
// dense MACs per output row: C_in.
double gbops(const Network& network, const Shape& input_shape,
             const BitAssignment& assignment, int activation_bits);

inline constexpr int kDefaultActivationBits = 32;

// Table-style summary row.
struct MetricsReport {
  double avg_bits = 32.0;
  double gbops = 0.0;
  double avg_acc = 0.0;
  double worst_acc = 0.0;
  double gap = 0.0;
  double eopp0 = 0.0;
  double eodd = 0.0;
  std::vector<std::optional<double>> per_group_acc;
  std::vector<std::size_t> empty_groups;
  std::vector<std::size_t> eopp0_skipped;
  std::vector<std::size_t> eodd_skipped;

  // Flat object keyed by the table column names.
  nlohmann::json to_json() const;
  nlohmann::json details_json() const;
  static MetricsReport from_json(const nlohmann::json& flat);
};

// Evaluates `network` on `data` with the assignment's fake-quantised
// weights (full precision when `assignment` is empty).
MetricsReport evaluate(const Network& network, const Dataset& data,
                       const std::optional<BitAssignment>& assignment,
                       int activation_bits = kDefaultActivationBits,
                       std::size_t batch_size = 256);

}  // namespace fairmp

#endif  // FAIRMP_METRICS_H_
