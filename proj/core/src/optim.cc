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

#include "fairmp/optim.h"

#include <cmath>

#include "fairmp/errors.h"

namespace fairmp {

void AdamW::step(std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) {
    throw ShapeError("AdamW: " + std::to_string(params.size()) +
                     " parameters but " + std::to_string(grads.size()) +
                     " gradients");
  }
  if (m_.empty()) {
    for (const Tensor* p : params) {
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
  }
  if (m_.size() != params.size()) {
    throw ShapeError("AdamW: parameter count changed between steps");
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& w = *params[k];
    const Tensor& g = grads[k];
    if (w.shape() != g.shape() || w.shape() != m_[k].shape()) {
      throw ShapeError("AdamW: shape mismatch for parameter " + std::to_string(k));
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      m_[k][i] = options_.beta1 * m_[k][i] + (1.0 - options_.beta1) * g[i];
      v_[k][i] = options_.beta2 * v_[k][i] + (1.0 - options_.beta2) * g[i] * g[i];
      const double m_hat = m_[k][i] / bc1;
      const double v_hat = v_[k][i] / bc2;
      w[i] -= options_.lr * (m_hat / (std::sqrt(v_hat) + options_.eps) +
                             options_.weight_decay * w[i]);
    }
  }
}

}  // namespace fairmp
