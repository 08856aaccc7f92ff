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

#ifndef FAIRMP_PIPELINE_H_
#define FAIRMP_PIPELINE_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairmp/allocation.h"
#include "fairmp/baq.h"
#include "fairmp/data.h"
#include "fairmp/importance.h"
#include "fairmp/metrics.h"
#include "fairmp/net.h"

namespace fairmp {

enum class ModeKind { kFp32, kUniformQat, kFairQuantQat, kFairQuantBaq, kPtqUniform };

// Parsed quantisation mode: "fp32", "uniform-<b>", "fairquant-qat",
// "fairquant-baq" or "ptq-uniform-<b>".
struct Mode {
  ModeKind kind = ModeKind::kFp32;
  int bits = 32;  // uniform modes only

  static Mode parse(const std::string& name);
  std::string name() const;
  bool trains() const noexcept {
    return kind == ModeKind::kUniformQat || kind == ModeKind::kFairQuantQat ||
           kind == ModeKind::kFairQuantBaq;
  }
};

// Default layer list: two 3x3 convolutions (the second strided), then two
// dense layers; the final width "classes" follows the dataset.
nlohmann::json default_network_json();

// Everything a run needs. Serialised as JSON; unknown keys are rejected.
struct ExperimentConfig {
  DatasetSpec dataset;
  std::optional<std::uint64_t> data_seed = 2026;  // empty: derived from `seed`
  std::string manifest;  // external dataset manifest; empty uses <out>/data
  std::array<double, 3> split{0.6, 0.2, 0.2};
  nlohmann::json network = default_network_json();

  std::string mode = "fairquant-baq";
  std::string granularity = "per-channel";
  BitPalette palette{{2, 4, 8}, {0.2, 0.4, 0.4}};
  int b_min = 4;
  int b_max = 8;
  std::string baq_init = "high-precision";  // or "warm-start"

  double lambda_fair = 0.5;
  double lambda_baq_b = 0.01;
  double weight_lr = 1e-4;
  double logit_lr = 1e-2;
  double weight_decay = 0.01;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;

  std::size_t pretrain_epochs = 10;
  double pretrain_lr = 1e-3;

  std::size_t calibration_batches = 50;
  int activation_bits = kDefaultActivationBits;

  std::uint64_t seed = 1;
  std::size_t num_seeds = 3;

  std::string sweep_axis = "lambda_baq_b";
  std::vector<double> sweep_values{0.0, 0.001, 0.01, 0.1};
  std::size_t sweep_seeds = 5;

  std::string output_dir;

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& doc);
  void validate() const;

  // SHA-256 of the canonical JSON form.
  std::string digest() const;
  // Digest with the seed and output location blanked: identifies the
  // configuration shared by the seeds of one table row.
  std::string group_key() const;
};

// Applies a dotted-path override such as "dataset.shift=0.5"; the value is
// parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& config, const std::string& assignment);

ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {});

// Named sub-seeds of one root seed.
struct SeedSet {
  std::uint64_t data = 0;
  std::uint64_t split = 0;
  std::uint64_t init = 0;
  std::uint64_t shuffle = 0;
  std::uint64_t calibration = 0;
};

SeedSet derive_seeds(const ExperimentConfig& config, std::uint64_t root);

DatasetSpec resolved_dataset_spec(const ExperimentConfig& config, std::uint64_t root);
Network build_network(const ExperimentConfig& config, const Shape& input_shape,
                      int num_classes, std::uint64_t init_seed);
TrainOptions finetune_options(const ExperimentConfig& config, const SeedSet& seeds);

struct EpochRecord {
  std::size_t epoch = 0;
  double task = 0.0, fair = 0.0, bitrate = 0.0, total = 0.0, avg_bits = 0.0;
  std::map<int, std::size_t> bit_histogram;
};

struct RunResult {
  std::string mode;
  std::uint64_t seed = 0;
  std::string config_digest;
  std::string group_key;
  nlohmann::json config;
  MetricsReport metrics;
  std::vector<EpochRecord> traces;
  std::optional<AllocationRecord> assignment;
  double wall_clock_seconds = 0.0;

  nlohmann::json to_json() const;
  static RunResult from_json(const nlohmann::json& doc);
};

inline constexpr const char* kRunResultSchema = "fairmp-run-result";

// In-process pipeline stages shared by the commands, sweeps and tests.
struct PretrainOutcome {
  Network network;
  RunResult result;
};

PretrainOutcome pretrain(const ExperimentConfig& config, const DatasetSplit& data,
                         std::uint64_t root);

struct CalibrationOutcome {
  ScopeImportance scoped;
  ReducedImportance reduced;
  Allocation allocation;
};

CalibrationOutcome calibrate_allocate(const ExperimentConfig& config, Network& checkpoint,
                                      const DatasetSplit& data, std::uint64_t root);

struct RunOutcome {
  Network network;
  RunResult result;
};

RunOutcome run_mode(const ExperimentConfig& config, const Network& checkpoint,
                    const DatasetSplit& data, const std::optional<Allocation>& allocation,
                    std::uint64_t root);

DatasetSplit prepare_data(const ExperimentConfig& config, const Dataset& dataset,
                          std::uint64_t root);

// Commands. Output goes below output_root(config).
std::filesystem::path output_root(const ExperimentConfig& config);
inline constexpr const char* kOutputRootEnv = "FAIRMP_OUTPUT_ROOT";

struct GenerateDataOutput {
  std::filesystem::path manifest;
  std::string checksum;
};

GenerateDataOutput cmd_generate_data(const ExperimentConfig& config);
std::vector<std::filesystem::path> cmd_pretrain(const ExperimentConfig& config);
std::vector<std::filesystem::path> cmd_calibrate_allocate(const ExperimentConfig& config);
std::vector<std::filesystem::path> cmd_run(const ExperimentConfig& config);

struct SweepOutput {
  std::filesystem::path csv;
  std::vector<std::filesystem::path> results;
  std::vector<std::string> failures;
};

SweepOutput cmd_sweep(const ExperimentConfig& config);

// Markdown table with one row per configuration (mean +- stddev across
// seeds for the accuracy columns), rows sorted by (mode, AvgBits).
// Corrupt result files are skipped and reported through `warnings`.
std::string cmd_report(const std::filesystem::path& run_dir,
                       std::vector<std::string>* warnings = nullptr);

// Per-seed file locations.
std::filesystem::path seed_dir(const ExperimentConfig& config, std::uint64_t seed);

// 97.5% Student-t quantile times stddev / sqrt(n); 0 for n < 2.
double ci95_half_width(const std::vector<double>& values);
double mean_of(const std::vector<double>& values);
double stddev_of(const std::vector<double>& values);

}  // namespace fairmp

#endif  // FAIRMP_PIPELINE_H_
