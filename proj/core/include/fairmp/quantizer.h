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

#ifndef FAIRMP_QUANTIZER_H_
#define FAIRMP_QUANTIZER_H_

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fairmp/tensor.h"

namespace fairmp {

class Network;

// Lower bound on every scope scale; keeps all-zero scopes well defined.
inline constexpr double kScaleEpsilon = 1e-8;

enum class Granularity { kPerTensor, kPerChannel };

std::string granularity_name(Granularity granularity);
Granularity parse_granularity(const std::string& name);

// A run of weights that shares one bit-width: a whole weight tensor, or one
// output channel (a contiguous block along the first axis).
struct Scope {
  std::size_t layer_id = 0;
  std::optional<std::size_t> channel;  // empty for whole-tensor scopes
  std::size_t offset = 0;              // first element within the weight
  std::size_t size = 0;

  bool operator==(const Scope&) const = default;
};

// Scopes of every quantizable layer, ordered by (layer, channel).
std::vector<Scope> enumerate_scopes(const Network& network,
                                    Granularity granularity);

// Scopes of a single weight tensor belonging to `layer_id`.
std::vector<Scope> layer_scopes(std::size_t layer_id, const Shape& weight_shape,
                                Granularity granularity);

// Largest representable integer level, 2^(b-1) - 1. Requires bits >= 2.
double qmax_for_bits(int bits);

// Round half away from zero; shared by the weight quantizer and bit proxy.
double round_half_away(double x);

// max(||w||_inf / qmax, eps).
double compute_scale(std::span<const double> weights, int bits);

// s * clip(round(w / s), -qmax, qmax), written into `out`.
void quantize_dequantize(std::span<const double> weights, int bits,
                         double scale, std::span<double> out);
std::vector<double> quantize_dequantize(std::span<const double> weights,
                                        int bits, double scale);

// Straight-through gradient: upstream masked by 1(|w| <= qmax * s).
void ste_backward(std::span<const double> upstream,
                  std::span<const double> weights, int bits, double scale,
                  std::span<double> out);
std::vector<double> ste_backward(std::span<const double> upstream,
                                 std::span<const double> weights, int bits,
                                 double scale);

// Per-layer fake-quantization directive: one bit-width per scope of every
// named layer. Layers absent from `bits` run in full precision.
struct QuantPlan {
  Granularity granularity = Granularity::kPerChannel;
  std::map<std::size_t, std::vector<int>> bits;

  bool operator==(const QuantPlan&) const = default;
};

QuantPlan uniform_plan(const Network& network, Granularity granularity,
                       int bits);

// Result of fake-quantizing one weight tensor under a per-scope bit list.
// Scales are recomputed from the floating weights on every call.
struct QuantizedWeight {
  Tensor values;
  std::vector<int> bits;
  std::vector<double> scales;
  std::vector<double> max_abs;
};

QuantizedWeight fake_quantize(const Tensor& weight, Granularity granularity,
                              std::span<const int> bits);

// Gradients through a fake-quantized weight given dL/dQ(W):
//  - weight: STE mask applied elementwise;
//  - bits: dL/db per scope via
//      dQ/ds * ds/dqmax * dqmax/db, with
//      dqmax/db = ln2 * 2^(b-1),
//      ds/dqmax = -||W_S||_inf / qmax^2 (0 while the eps clamp binds),
//      dQ/ds   = round(w/s) - w/s inside the clip range, +-qmax outside.
struct QuantizedWeightGrad {
  Tensor weight;
  std::vector<double> bits;
};

QuantizedWeightGrad fake_quantize_backward(const Tensor& weight,
                                           const QuantizedWeight& quantized,
                                           Granularity granularity,
                                           const Tensor& upstream);

}  // namespace fairmp

#endif  // FAIRMP_QUANTIZER_H_
