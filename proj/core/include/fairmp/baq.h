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

#ifndef FAIRMP_BAQ_H_
#define FAIRMP_BAQ_H_

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "fairmp/allocation.h"
#include "fairmp/data.h"
#include "fairmp/net.h"

namespace fairmp {

// Continuous bit proxy tanh(|logit|) (b_max - b_min) + b_min and its
// rounded operational bit-width.
struct BitProxy {
  double continuous = 0.0;
  int bits = 0;
};

BitProxy bit_proxy(double logit, int b_min, int b_max);

// d b_cont / d logit = sign(logit) (1 - tanh^2 |logit|) (b_max - b_min),
// with sign(0) = 0.
double bit_proxy_grad(double logit, int b_min, int b_max);

// max_g L_g - min_g L_g over the groups present; 0 with fewer than two.
double fairness_loss(std::span<const std::optional<double>> group_losses);

// Sum of squared bit logits.
double bitrate_penalty(std::span<const double> logits);

struct LossWeights {
  double lambda_fair = 0.5;
  double lambda_baq_b = 0.01;

  void validate() const;
};

// L_task + lambda_fair L_fair + lambda_baq_b L_baq_b.
double total_loss(double task, double fair, double penalty, const LossWeights& weights);

// Logit initialisation giving b_cont within 0.01 (b_max - b_min) of b_max.
inline constexpr double kHighPrecisionTanh = 1.0 - 1e-3;

struct TrainOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double weight_lr = 1e-4;
  double weight_decay = 0.01;
  double logit_lr = 1e-2;
  LossWeights loss;
  int b_min = 4;
  int b_max = 8;
  Granularity granularity = Granularity::kPerChannel;
  std::uint64_t shuffle_seed = 0;

  void validate() const;
};

struct EpochTrace {
  std::size_t epoch = 0;
  double task = 0.0;     // mean over the epoch's batches
  double fair = 0.0;
  double bitrate = 0.0;
  double total = 0.0;
  double avg_bits = 0.0;                       // at the epoch's first forward
  std::map<int, std::size_t> first_forward_bits;  // histogram, same point
};

struct TrainResult {
  std::vector<EpochTrace> epochs;
  std::vector<double> step_losses;  // total loss of every optimisation step
  std::optional<BitAssignment> initial_assignment;  // bits at the first forward
  std::optional<BitAssignment> final_assignment;
  std::vector<double> logits;   // BAQ only
  std::vector<double> b_cont;   // BAQ only
};

// Plain training without a quantisation plan (the full-precision reference).
TrainResult train_full_precision(Network& network, const Dataset& train,
                                 const TrainOptions& options);

// Quantisation-aware training at a fixed per-scope assignment; straight-
// through weight gradients; loss L_task + lambda_fair L_fair.
TrainResult train_qat(Network& network, const Dataset& train,
                      const BitAssignment& assignment, const TrainOptions& options);

// Joint weight/bit-logit training. Without `warm_start` every logit starts
// at atanh(kHighPrecisionTanh); with it, logits reproduce the assignment at
// the first forward. Throws DivergenceError on a non-finite loss.
TrainResult train_baq(Network& network, const Dataset& train,
                      const std::optional<BitAssignment>& warm_start,
                      const TrainOptions& options);

// Bits defined by a logit vector over `scopes`.
BitAssignment assignment_from_logits(std::span<const Scope> scopes,
                                     std::span<const double> logits,
                                     Granularity granularity, int b_min, int b_max);

}  // namespace fairmp

#endif  // FAIRMP_BAQ_H_
