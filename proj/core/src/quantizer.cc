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

#include "fairmp/quantizer.h"

#include <algorithm>
#include <cfloat>
#include <cmath>

#include "fairmp/errors.h"
#include "fairmp/net.h"

namespace fairmp {
namespace {

// |w| <= qmax * s, tolerant of the few ulps lost when s was computed from
// the same scope (the extreme weight must stay inside the clip range).
bool inside_clip_range(double w, double limit) {
  return std::abs(w) <= limit * (1.0 + 8.0 * DBL_EPSILON);
}

void check_bits(int bits) {
  if (bits < 2) {
    throw ConfigError("bit-width must be >= 2, got " + std::to_string(bits));
  }
}

}  // namespace

std::string granularity_name(Granularity granularity) {
  return granularity == Granularity::kPerTensor ? "per-tensor" : "per-channel";
}

Granularity parse_granularity(const std::string& name) {
  if (name == "per-tensor") return Granularity::kPerTensor;
  if (name == "per-channel") return Granularity::kPerChannel;
  throw ConfigError("unknown granularity '" + name + "'");
}

std::vector<Scope> layer_scopes(std::size_t layer_id, const Shape& weight_shape,
                                Granularity granularity) {
  const std::size_t total = shape_product(weight_shape);
  if (granularity == Granularity::kPerTensor || weight_shape.empty()) {
    return {Scope{layer_id, std::nullopt, 0, total}};
  }
  const std::size_t channels = weight_shape[0];
  const std::size_t per_channel = total / channels;
  std::vector<Scope> scopes;
  scopes.reserve(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    scopes.push_back(Scope{layer_id, c, c * per_channel, per_channel});
  }
  return scopes;
}

std::vector<Scope> enumerate_scopes(const Network& network,
                                    Granularity granularity) {
  std::vector<Scope> scopes;
  for (std::size_t id : network.quantizable_layers()) {
    auto layer = layer_scopes(id, network.layer(id).weight.shape(), granularity);
    scopes.insert(scopes.end(), layer.begin(), layer.end());
  }
  return scopes;
}

double qmax_for_bits(int bits) {
  check_bits(bits);
  return std::ldexp(1.0, bits - 1) - 1.0;
}

double round_half_away(double x) { return std::round(x); }

double compute_scale(std::span<const double> weights, int bits) {
  double max_abs = 0.0;
  for (double w : weights) max_abs = std::max(max_abs, std::abs(w));
  return std::max(max_abs / qmax_for_bits(bits), kScaleEpsilon);
}

void quantize_dequantize(std::span<const double> weights, int bits,
                         double scale, std::span<double> out) {
  if (out.size() != weights.size()) {
    throw ShapeError("quantize_dequantize: output size mismatch");
  }
  const double qmax = qmax_for_bits(bits);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double level = std::clamp(round_half_away(weights[i] / scale), -qmax, qmax);
    out[i] = scale * level;
  }
}

std::vector<double> quantize_dequantize(std::span<const double> weights,
                                        int bits, double scale) {
  std::vector<double> out(weights.size());
  quantize_dequantize(weights, bits, scale, out);
  return out;
}

void ste_backward(std::span<const double> upstream,
                  std::span<const double> weights, int bits, double scale,
                  std::span<double> out) {
  if (upstream.size() != weights.size() || out.size() != weights.size()) {
    throw ShapeError("ste_backward: size mismatch");
  }
  const double limit = qmax_for_bits(bits) * scale;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out[i] = inside_clip_range(weights[i], limit) ? upstream[i] : 0.0;
  }
}

std::vector<double> ste_backward(std::span<const double> upstream,
                                 std::span<const double> weights, int bits,
                                 double scale) {
  std::vector<double> out(weights.size());
  ste_backward(upstream, weights, bits, scale, out);
  return out;
}

QuantPlan uniform_plan(const Network& network, Granularity granularity,
                       int bits) {
  check_bits(bits);
  QuantPlan plan;
  plan.granularity = granularity;
  for (std::size_t id : network.quantizable_layers()) {
    const auto scopes =
        layer_scopes(id, network.layer(id).weight.shape(), granularity);
    plan.bits[id] = std::vector<int>(scopes.size(), bits);
  }
  return plan;
}

QuantizedWeight fake_quantize(const Tensor& weight, Granularity granularity,
                              std::span<const int> bits) {
  const auto scopes = layer_scopes(0, weight.shape(), granularity);
  if (bits.size() != scopes.size()) {
    throw ShapeError("fake_quantize: " + std::to_string(bits.size()) +
                     " bit-widths for " + std::to_string(scopes.size()) +
                     " scopes");
  }
  QuantizedWeight q;
  q.values = Tensor(weight.shape());
  q.bits.assign(bits.begin(), bits.end());
  q.scales.resize(scopes.size());
  q.max_abs.resize(scopes.size());
  const auto src = weight.values();
  auto dst = q.values.values();
  for (std::size_t k = 0; k < scopes.size(); ++k) {
    const auto w = src.subspan(scopes[k].offset, scopes[k].size);
    double max_abs = 0.0;
    for (double v : w) max_abs = std::max(max_abs, std::abs(v));
    q.max_abs[k] = max_abs;
    q.scales[k] = compute_scale(w, bits[k]);
    quantize_dequantize(w, bits[k], q.scales[k],
                        dst.subspan(scopes[k].offset, scopes[k].size));
  }
  return q;
}

QuantizedWeightGrad fake_quantize_backward(const Tensor& weight,
                                           const QuantizedWeight& quantized,
                                           Granularity granularity,
                                           const Tensor& upstream) {
  if (upstream.shape() != weight.shape()) {
    throw ShapeError("fake_quantize_backward: gradient shape " +
                     shape_string(upstream.shape()) + " vs weight " +
                     shape_string(weight.shape()));
  }
  const auto scopes = layer_scopes(0, weight.shape(), granularity);
  QuantizedWeightGrad grad;
  grad.weight = Tensor(weight.shape());
  grad.bits.assign(scopes.size(), 0.0);
  const auto w_all = weight.values();
  const auto up_all = upstream.values();
  auto out_all = grad.weight.values();
  for (std::size_t k = 0; k < scopes.size(); ++k) {
    const int b = quantized.bits[k];
    const double s = quantized.scales[k];
    const double qmax = qmax_for_bits(b);
    const double limit = qmax * s;
    const bool clamped = quantized.max_abs[k] / qmax < kScaleEpsilon;
    const double ds_dqmax =
        clamped ? 0.0 : -quantized.max_abs[k] / (qmax * qmax);
    const double dqmax_db = std::log(2.0) * std::ldexp(1.0, b - 1);
    double dl_ds = 0.0;
    for (std::size_t i = scopes[k].offset; i < scopes[k].offset + scopes[k].size;
         ++i) {
      const double w = w_all[i];
      if (inside_clip_range(w, limit)) {
        out_all[i] = up_all[i];
        dl_ds += up_all[i] * (round_half_away(w / s) - w / s);
      } else {
        out_all[i] = 0.0;
        dl_ds += up_all[i] * (w > 0.0 ? qmax : -qmax);
      }
    }
    grad.bits[k] = dl_ds * ds_dqmax * dqmax_db;
  }
  return grad;
}

}  // namespace fairmp
