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

#ifndef FAIRMP_DATA_H_
#define FAIRMP_DATA_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairmp/tensor.h"

namespace fairmp {

// A mini-batch: features [N, ...feature_shape], class labels and sensitive
// group indicators.
struct Batch {
  Tensor features;
  std::vector<int> labels;
  std::vector<int> groups;

  std::size_t size() const noexcept { return labels.size(); }
};

// Grouped classification samples stored column-wise.
struct Dataset {
  Shape feature_shape;
  int num_classes = 0;
  int num_groups = 0;
  std::vector<double> features;  // size() * product(feature_shape)
  std::vector<int> labels;
  std::vector<int> groups;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t feature_size() const { return shape_product(feature_shape); }
  std::span<const double> sample(std::size_t i) const;

  Batch gather(std::span<const std::size_t> indices) const;
  Batch all() const;
  Dataset subset(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> group_counts() const;

  bool operator==(const Dataset&) const = default;
};

// Parameters of the synthetic generator. Every class has a Gaussian
// prototype with per-feature scale `class_separation`. Groups g >= 1 use
// prototypes partially replaced by group-specific draws of the same scale
// (fraction `shift` in [0, 1]), so a minority group needs its own decision
// boundaries but gets fewer samples to learn them.
struct DatasetSpec {
  std::size_t num_samples = 4000;
  int num_classes = 4;
  int num_groups = 2;
  std::vector<double> group_proportions{0.8, 0.2};
  double shift = 1.0;
  Shape feature_shape{1, 8, 8};
  double noise = 1.0;
  double class_separation = 0.4;
  std::uint64_t seed = 0;

  void validate() const;
  bool balanced() const noexcept { return shift == 0.0; }
};

void to_json(nlohmann::json& j, const DatasetSpec& spec);
void from_json(const nlohmann::json& j, DatasetSpec& spec);

// Integer counts summing to `total`, proportional to `proportions`, using
// the largest-remainder rule (ties to the lower index).
std::vector<std::size_t> largest_remainder_counts(std::size_t total,
                                                  std::span<const double> proportions);

Dataset generate_synthetic(const DatasetSpec& spec);

struct DatasetSplit {
  Dataset train;
  Dataset validation;
  Dataset test;
};

// Stratified by (label, group) cell. Throws ConfigError naming the cell when
// a non-empty cell has fewer members than there are non-empty splits.
DatasetSplit split(const Dataset& dataset, std::array<double, 3> fractions,
                   std::uint64_t seed);

// Optional per-batch transform applied as batches are produced.
using BatchTransform = std::function<void(Batch&)>;

// One epoch of shuffled index batches; the permutation depends only on
// (shuffle_seed, epoch). The last partial batch is kept.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t num_samples,
                                                    std::size_t batch_size,
                                                    std::uint64_t shuffle_seed,
                                                    std::size_t epoch);

std::vector<Batch> batches(const Dataset& dataset, std::size_t batch_size,
                           std::uint64_t shuffle_seed, std::size_t epoch,
                           const BatchTransform& transform = {});

// `num_batches` batches drawn without replacement from one permutation of
// `train`, cycling through the permutation once it is exhausted.
std::vector<Batch> calibration_stream(const Dataset& train, std::size_t batch_size,
                                      std::size_t num_batches, std::uint64_t seed);

// On-disk layout: <dir>/manifest.csv (id,label,group,data), one binary blob
// per sample under <dir>/samples/, and <dir>/dataset.json with metadata.
// Each blob starts with a 16-byte little-endian header:
//   u16 dtype (1 = f64, 2 = f32), u16 rank, u32 dims[3] (unused dims 0),
// followed by the values. The `data` column holds a blob path relative to
// the manifest or an inline list "inline:v0 v1 ...".
inline constexpr std::uint16_t kDtypeF64 = 1;
inline constexpr std::uint16_t kDtypeF32 = 2;

std::vector<std::uint8_t> encode_sample_blob(std::span<const double> values,
                                             const Shape& shape);
std::vector<double> decode_sample_blob(std::span<const std::uint8_t> bytes,
                                       Shape* shape = nullptr);

// Writes the dataset and returns its SHA-256 checksum (hex) over the
// manifest and all blobs.
std::string write_dataset(const std::filesystem::path& dir, const Dataset& dataset,
                          const nlohmann::json& metadata);
Dataset read_dataset(const std::filesystem::path& manifest);

// splitmix64-based derivation of independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);
std::uint64_t derive_seed(std::uint64_t root, const std::string& name);

}  // namespace fairmp

#endif  // FAIRMP_DATA_H_
