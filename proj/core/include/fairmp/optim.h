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

#ifndef FAIRMP_OPTIM_H_
#define FAIRMP_OPTIM_H_

#include <cstddef>
#include <span>
#include <vector>

#include "fairmp/tensor.h"

namespace fairmp {

// AdamW with decoupled weight decay:
//   w <- w - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * w)
class AdamW {
 public:
  struct Options {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  AdamW() = default;
  explicit AdamW(Options options) : options_(options) {}

  const Options& options() const noexcept { return options_; }
  void set_lr(double lr) noexcept { options_.lr = lr; }
  std::size_t step_count() const noexcept { return step_; }

  // Moment buffers are created lazily on the first step and must keep their
  // shapes afterwards.
  void step(std::span<Tensor* const> params, std::span<const Tensor> grads);

  const std::vector<Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor>& second_moments() const noexcept { return v_; }

 private:
  Options options_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::size_t step_ = 0;
};

}  // namespace fairmp

#endif  // FAIRMP_OPTIM_H_
