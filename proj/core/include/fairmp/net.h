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

#ifndef FAIRMP_NET_H_
#define FAIRMP_NET_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairmp/quantizer.h"
#include "fairmp/tensor.h"

namespace fairmp {

enum class LayerKind { kDense, kConv2d, kRelu, kFlatten };

std::string layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(const std::string& name);

// One stage of a sequential network. Only dense and conv2d layers carry
// parameters, and only their weights are ever quantized.
struct Layer {
  LayerKind kind = LayerKind::kRelu;
  Tensor weight;  // dense: [out, in]; conv2d: [out, in, kh, kw]
  std::optional<Tensor> bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  bool has_params() const noexcept {
    return kind == LayerKind::kDense || kind == LayerKind::kConv2d;
  }

  static Layer dense(std::size_t out_features, std::size_t in_features,
                     bool with_bias = true);
  static Layer conv2d(std::size_t out_channels, std::size_t in_channels,
                      std::size_t kernel, std::size_t stride = 1,
                      std::size_t padding = 0, bool with_bias = true);
  static Layer relu();
  static Layer flatten();

  bool operator==(const Layer&) const = default;
};

// Identifies one parameter tensor: the weight or bias of a layer.
struct ParamRef {
  std::size_t layer_id = 0;
  bool is_bias = false;
};

// Output of a backward pass. `params` follows Network::param_refs();
// `bits` holds dL/db per scope for every layer the forward quantized.
struct Gradients {
  std::vector<Tensor> params;
  std::map<std::size_t, std::vector<double>> bits;
};

// Sequential network over a fixed per-sample input shape. forward() keeps
// the activations of the latest call for backward(); only one forward may
// be outstanding per instance. predict() is const and cache-free, so
// concurrent evaluation is safe.
class Network {
 public:
  Network() = default;
  Network(Shape input_shape, std::vector<Layer> layers);

  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t num_layers() const noexcept { return layers_.size(); }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  const Layer& layer(std::size_t id) const { return layers_.at(id); }
  Layer& mutable_layer(std::size_t id) { return layers_.at(id); }

  // Per-sample output shape of every layer for `input_shape`.
  std::vector<Shape> output_shapes(const Shape& input_shape) const;
  std::vector<std::size_t> quantizable_layers() const;
  std::size_t parameter_count() const;
  std::size_t quantizable_parameter_count() const;

  std::vector<ParamRef> param_refs() const;
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;

  Tensor forward(const Tensor& batch, const QuantPlan* plan = nullptr);
  Gradients backward(const Tensor& dlogits);
  Tensor predict(const Tensor& batch, const QuantPlan* plan = nullptr) const;

  // He-uniform weights and zero biases drawn from `seed`.
  void initialize(std::uint64_t seed);

  nlohmann::json to_json() const;
  static Network from_json(const nlohmann::json& doc);
  void save(const std::filesystem::path& path) const;
  static Network load(const std::filesystem::path& path);

  bool operator==(const Network& other) const {
    return input_shape_ == other.input_shape_ && layers_ == other.layers_;
  }

 private:
  struct Cache {
    std::vector<Tensor> inputs;  // input to every layer
    std::map<std::size_t, QuantizedWeight> quantized;
    Granularity granularity = Granularity::kPerChannel;
    bool valid = false;
  };

  Tensor run(const Tensor& batch, const QuantPlan* plan, Cache* cache) const;
  void check_plan(const QuantPlan& plan) const;

  Shape input_shape_;
  std::vector<Layer> layers_;
  std::size_t num_classes_ = 0;
  Cache cache_;
};

// Network file format identifier and version written by Network::save.
inline constexpr const char* kNetworkFormat = "fairmp-network";
inline constexpr int kNetworkFormatVersion = 1;

}  // namespace fairmp

#endif  // FAIRMP_NET_H_
