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

#ifndef FAIRMP_LOSS_H_
#define FAIRMP_LOSS_H_

#include <span>
#include <vector>

#include "fairmp/tensor.h"

namespace fairmp {

struct CrossEntropy {
  double loss = 0.0;
  Tensor dlogits;
};

// Mean softmax cross-entropy and its gradient (softmax - onehot) / N.
CrossEntropy loss_cross_entropy(const Tensor& logits, std::span<const int> labels);

// Row-wise softmax probabilities and per-sample losses; the building block
// for group-restricted and fairness-weighted objectives.
struct PerSampleCrossEntropy {
  Tensor probabilities;
  std::vector<double> losses;
};

PerSampleCrossEntropy per_sample_cross_entropy(const Tensor& logits,
                                               std::span<const int> labels);

// dL/dlogits for L = sum_i weight_i * loss_i.
Tensor weighted_cross_entropy_grad(const PerSampleCrossEntropy& ce,
                                   std::span<const int> labels,
                                   std::span<const double> weights);

}  // namespace fairmp

#endif  // FAIRMP_LOSS_H_
