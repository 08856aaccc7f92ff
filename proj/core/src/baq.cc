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

#include "fairmp/baq.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "fairmp/errors.h"
#include "fairmp/loss.h"
#include "fairmp/optim.h"

namespace fairmp {
namespace {

struct StepOutcome {
  double task = 0.0;
  double fair = 0.0;
  Gradients grads;
};

// One forward/backward of L_task + lambda_fair * L_fair. The fairness term
// enters the per-sample loss weights: +lambda/n_max on the worst group,
// -lambda/n_min on the best one (lowest index on ties).
StepOutcome forward_backward(Network& network, const Batch& batch, const QuantPlan* plan,
                             double lambda_fair) {
  const Tensor logits = network.forward(batch.features, plan);
  const auto ce = per_sample_cross_entropy(logits, batch.labels);
  const std::size_t n = batch.size();
  StepOutcome out;
  std::vector<double> weights(n, 1.0 / static_cast<double>(n));
  for (double l : ce.losses) out.task += l;
  out.task /= static_cast<double>(n);

  if (lambda_fair > 0.0) {
    std::map<int, std::pair<double, std::size_t>> per_group;
    for (std::size_t i = 0; i < n; ++i) {
      auto& [sum, count] = per_group[batch.groups[i]];
      sum += ce.losses[i];
      ++count;
    }
    if (per_group.size() >= 2) {
      int worst = per_group.begin()->first, best = worst;
      double worst_loss = -std::numeric_limits<double>::infinity();
      double best_loss = std::numeric_limits<double>::infinity();
      std::vector<std::optional<double>> losses;
      for (const auto& [g, acc] : per_group) {
        const double mean = acc.first / static_cast<double>(acc.second);
        losses.emplace_back(mean);
        if (mean > worst_loss) worst_loss = mean, worst = g;
        if (mean < best_loss) best_loss = mean, best = g;
      }
      out.fair = fairness_loss(losses);
      if (worst != best) {
        const double w_hi = lambda_fair / static_cast<double>(per_group[worst].second);
        const double w_lo = lambda_fair / static_cast<double>(per_group[best].second);
        for (std::size_t i = 0; i < n; ++i) {
          if (batch.groups[i] == worst) weights[i] += w_hi;
          if (batch.groups[i] == best) weights[i] -= w_lo;
        }
      }
    }
  }
  out.grads = network.backward(weighted_cross_entropy_grad(ce, batch.labels, weights));
  return out;
}

enum class Mode { kFullPrecision, kFixedBits, kLearnedBits };

AdamW weight_optimizer(const TrainOptions& options) {
  AdamW::Options o;
  o.lr = options.weight_lr;
  o.weight_decay = options.weight_decay;
  return AdamW(o);
}

TrainResult train_loop(Network& network, const Dataset& train, const TrainOptions& options,
                       Mode mode, const BitAssignment* fixed,
                       std::vector<double> initial_logits) {
  options.validate();
  if (train.size() == 0) throw ConfigError("training split is empty");
  TrainResult result;
  AdamW weights_opt = weight_optimizer(options);
  AdamW::Options logit_opts;
  logit_opts.lr = options.logit_lr;
  logit_opts.weight_decay = 0.0;
  AdamW logits_opt(logit_opts);

  const std::vector<Scope> scopes = enumerate_scopes(network, options.granularity);
  // Scope index -> position within its layer's bit list.
  std::vector<std::size_t> position(scopes.size());
  {
    std::map<std::size_t, std::size_t> seen;
    for (std::size_t k = 0; k < scopes.size(); ++k) position[k] = seen[scopes[k].layer_id]++;
  }
  if (mode != Mode::kLearnedBits) initial_logits.assign(scopes.size(), 0.0);
  Tensor logits({scopes.size()}, std::move(initial_logits));
  const double lambda_fair = options.loss.lambda_fair;
  const double lambda_b = mode == Mode::kLearnedBits ? options.loss.lambda_baq_b : 0.0;

  auto current_assignment = [&]() -> std::optional<BitAssignment> {
    if (mode == Mode::kFixedBits) return *fixed;
    if (mode == Mode::kLearnedBits) {
      return assignment_from_logits(scopes, logits.values(), options.granularity,
                                    options.b_min, options.b_max);
    }
    return std::nullopt;
  };

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    EpochTrace trace;
    trace.epoch = epoch;
    const auto epoch_batches = batches(train, options.batch_size, options.shuffle_seed, epoch);
    for (std::size_t step = 0; step < epoch_batches.size(); ++step) {
      const auto assignment = current_assignment();
      QuantPlan plan;
      if (assignment) plan = assignment->to_plan();
      if (step == 0) {
        trace.avg_bits = assignment ? average_bits(*assignment) : 32.0;
        if (assignment) trace.first_forward_bits = assignment->histogram();
        if (epoch == 0) result.initial_assignment = assignment;
      }
      StepOutcome outcome = forward_backward(network, epoch_batches[step],
                                             assignment ? &plan : nullptr, lambda_fair);
      const double penalty = mode == Mode::kLearnedBits ? bitrate_penalty(logits.values()) : 0.0;
      const double total =
          total_loss(outcome.task, outcome.fair, penalty, LossWeights{lambda_fair, lambda_b});
      if (!std::isfinite(total)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", step " << step << " (task "
            << outcome.task << ", fair " << outcome.fair << ", bitrate " << penalty << ")";
        throw DivergenceError(msg.str());
      }
      result.step_losses.push_back(total);
      trace.task += outcome.task;
      trace.fair += outcome.fair;
      trace.bitrate += penalty;
      trace.total += total;

      auto params = network.parameters();
      weights_opt.step(params, outcome.grads.params);

      if (mode == Mode::kLearnedBits) {
        Tensor logit_grad({scopes.size()});
        for (std::size_t k = 0; k < scopes.size(); ++k) {
          const double dl_db = outcome.grads.bits.at(scopes[k].layer_id)[position[k]];
          logit_grad[k] = dl_db * bit_proxy_grad(logits[k], options.b_min, options.b_max) +
                          lambda_b * 2.0 * logits[k];
        }
        Tensor* logit_param = &logits;
        logits_opt.step(std::span<Tensor* const>(&logit_param, 1),
                        std::span<const Tensor>(&logit_grad, 1));
      }
    }
    const auto steps = static_cast<double>(epoch_batches.size());
    trace.task /= steps;
    trace.fair /= steps;
    trace.bitrate /= steps;
    trace.total /= steps;
    result.epochs.push_back(trace);
  }
  result.final_assignment = current_assignment();
  if (mode == Mode::kLearnedBits) {
    result.logits = logits.data();
    for (double l : result.logits) {
      result.b_cont.push_back(bit_proxy(l, options.b_min, options.b_max).continuous);
    }
  }
  return result;
}

}  // namespace

BitProxy bit_proxy(double logit, int b_min, int b_max) {
  const double cont = std::tanh(std::abs(logit)) * (b_max - b_min) + b_min;
  return {cont, static_cast<int>(round_half_away(cont))};
}

double bit_proxy_grad(double logit, int b_min, int b_max) {
  if (logit == 0.0) return 0.0;
  const double t = std::tanh(std::abs(logit));
  return (logit > 0.0 ? 1.0 : -1.0) * (1.0 - t * t) * (b_max - b_min);
}

double fairness_loss(std::span<const std::optional<double>> group_losses) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  std::size_t present = 0;
  for (const auto& l : group_losses) {
    if (!l) continue;
    ++present;
    lo = std::min(lo, *l);
    hi = std::max(hi, *l);
  }
  return present < 2 ? 0.0 : hi - lo;
}

double bitrate_penalty(std::span<const double> logits) {
  double sum = 0.0;
  for (double l : logits) sum += l * l;
  return sum;
}

void LossWeights::validate() const {
  if (!(lambda_fair >= 0.0)) throw ConfigError("lambda_fair must be >= 0");
  if (!(lambda_baq_b >= 0.0)) throw ConfigError("lambda_baq_b must be >= 0");
}

double total_loss(double task, double fair, double penalty, const LossWeights& weights) {
  weights.validate();
  return task + weights.lambda_fair * fair + weights.lambda_baq_b * penalty;
}

void TrainOptions::validate() const {
  loss.validate();
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(weight_lr >= 0.0) || !(logit_lr >= 0.0) || !(weight_decay >= 0.0)) {
    throw ConfigError("learning rates and weight decay must be >= 0");
  }
  if (b_min < 2 || b_min >= b_max) throw ConfigError("bit range needs 2 <= b_min < b_max");
}

BitAssignment assignment_from_logits(std::span<const Scope> scopes,
                                     std::span<const double> logits,
                                     Granularity granularity, int b_min, int b_max) {
  if (scopes.size() != logits.size()) {
    throw ShapeError("one logit per scope required");
  }
  BitAssignment a;
  a.granularity = granularity;
  a.scopes.assign(scopes.begin(), scopes.end());
  for (double l : logits) a.bits.push_back(bit_proxy(l, b_min, b_max).bits);
  return a;
}

TrainResult train_full_precision(Network& network, const Dataset& train,
                                 const TrainOptions& options) {
  return train_loop(network, train, options, Mode::kFullPrecision, nullptr, {});
}

TrainResult train_qat(Network& network, const Dataset& train,
                      const BitAssignment& assignment, const TrainOptions& options) {
  const auto scopes = enumerate_scopes(network, assignment.granularity);
  if (scopes != assignment.scopes || assignment.bits.size() != scopes.size()) {
    throw ConfigError("bit assignment does not match the network's scopes");
  }
  TrainOptions o = options;
  o.granularity = assignment.granularity;
  return train_loop(network, train, o, Mode::kFixedBits, &assignment, {});
}

TrainResult train_baq(Network& network, const Dataset& train,
                      const std::optional<BitAssignment>& warm_start,
                      const TrainOptions& options) {
  options.validate();
  const auto scopes = enumerate_scopes(network, options.granularity);
  std::vector<double> logits;
  if (warm_start) {
    if (warm_start->scopes != scopes) {
      throw ConfigError("warm-start assignment does not match the network's scopes");
    }
    logits = warm_start_logits(*warm_start, options.b_min, options.b_max);
  } else {
    logits.assign(scopes.size(), std::atanh(kHighPrecisionTanh));
  }
  return train_loop(network, train, options, Mode::kLearnedBits, nullptr, std::move(logits));
}

}  // namespace fairmp
