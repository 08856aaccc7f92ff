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

#include "fairmp/loss.h"

#include <algorithm>
#include <cmath>

#include "fairmp/errors.h"

namespace fairmp {
namespace {

void check_labels(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross-entropy expects logits [N, C] with N labels, got " +
                     shape_string(logits.shape()) + " and " +
                     std::to_string(labels.size()) + " labels");
  }
  const int classes = static_cast<int>(logits.dim(1));
  for (int y : labels) {
    if (y < 0 || y >= classes) {
      throw ShapeError("label " + std::to_string(y) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
  }
}

}  // namespace

PerSampleCrossEntropy per_sample_cross_entropy(const Tensor& logits,
                                               std::span<const int> labels) {
  check_labels(logits, labels);
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  PerSampleCrossEntropy out{Tensor(logits.shape()), std::vector<double>(n)};
  for (std::size_t s = 0; s < n; ++s) {
    const double* z = &logits.values()[s * c];
    const std::size_t top = static_cast<std::size_t>(std::max_element(z, z + c) - z);
    const double zmax = z[top];
    // The top term is exactly 1; log1p keeps precision for saturated rows.
    double rest = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      if (k != top) rest += std::exp(z[k] - zmax);
    }
    const double log_sum = std::log1p(rest);
    for (std::size_t k = 0; k < c; ++k) {
      out.probabilities[s * c + k] = std::exp(z[k] - zmax - log_sum);
    }
    out.losses[s] = log_sum - (z[labels[s]] - zmax);
  }
  return out;
}

Tensor weighted_cross_entropy_grad(const PerSampleCrossEntropy& ce,
                                   std::span<const int> labels,
                                   std::span<const double> weights) {
  const std::size_t n = ce.probabilities.dim(0), c = ce.probabilities.dim(1);
  if (weights.size() != n || labels.size() != n) {
    throw ShapeError("weighted_cross_entropy_grad: size mismatch");
  }
  Tensor grad(ce.probabilities.shape());
  for (std::size_t s = 0; s < n; ++s) {
    if (weights[s] == 0.0) continue;
    for (std::size_t k = 0; k < c; ++k) {
      const double onehot = static_cast<int>(k) == labels[s] ? 1.0 : 0.0;
      grad[s * c + k] = weights[s] * (ce.probabilities[s * c + k] - onehot);
    }
  }
  return grad;
}

CrossEntropy loss_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const auto ce = per_sample_cross_entropy(logits, labels);
  const std::size_t n = labels.size();
  if (n == 0) return {0.0, Tensor(logits.shape())};
  double total = 0.0;
  for (double l : ce.losses) total += l;
  const std::vector<double> weights(n, 1.0 / static_cast<double>(n));
  return {total / static_cast<double>(n),
          weighted_cross_entropy_grad(ce, labels, weights)};
}

}  // namespace fairmp
