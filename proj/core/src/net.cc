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

#include "fairmp/net.h"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "fairmp/errors.h"

namespace fairmp {
namespace {

using nlohmann::json;

std::string layer_label(std::size_t id, LayerKind kind) {
  return "layer " + std::to_string(id) + " (" + layer_kind_name(kind) + ")";
}

Shape layer_output_shape(std::size_t id, const Layer& layer, const Shape& in) {
  switch (layer.kind) {
    case LayerKind::kDense: {
      if (in.size() != 1 || in[0] != layer.weight.dim(1)) {
        throw ShapeError(layer_label(id, layer.kind) + " expects input [" +
                         std::to_string(layer.weight.dim(1)) + "], got " +
                         shape_string(in));
      }
      return {layer.weight.dim(0)};
    }
    case LayerKind::kConv2d: {
      const auto& w = layer.weight.shape();
      if (in.size() != 3 || in[0] != w[1]) {
        throw ShapeError(layer_label(id, layer.kind) + " expects input [" +
                         std::to_string(w[1]) + ", H, W], got " +
                         shape_string(in));
      }
      const std::size_t h = in[1] + 2 * layer.padding;
      const std::size_t wd = in[2] + 2 * layer.padding;
      if (h < w[2] || wd < w[3] || layer.stride == 0) {
        throw ShapeError(layer_label(id, layer.kind) + " kernel " +
                         shape_string(w) + " does not fit input " +
                         shape_string(in));
      }
      return {w[0], (h - w[2]) / layer.stride + 1, (wd - w[3]) / layer.stride + 1};
    }
    case LayerKind::kRelu:
      return in;
    case LayerKind::kFlatten:
      return {shape_product(in)};
  }
  return in;
}

void check_layer(std::size_t id, const Layer& layer) {
  const std::size_t want_rank = layer.kind == LayerKind::kDense    ? 2
                                : layer.kind == LayerKind::kConv2d ? 4
                                                                   : 0;
  if (!layer.has_params()) return;
  if (layer.weight.rank() != want_rank || layer.weight.empty()) {
    throw ShapeError(layer_label(id, layer.kind) + " has weight shape " +
                     shape_string(layer.weight.shape()));
  }
  if (layer.bias && layer.bias->shape() != Shape{layer.weight.dim(0)}) {
    throw ShapeError(layer_label(id, layer.kind) + " has bias shape " +
                     shape_string(layer.bias->shape()));
  }
}

// y[n, o] = sum_i x[n, i] w[o, i] + b[o]
Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor* b) {
  const std::size_t n = x.dim(0), in = w.dim(1), out = w.dim(0);
  Tensor y({n, out});
  for (std::size_t s = 0; s < n; ++s) {
    const double* xs = &x.values()[s * in];
    for (std::size_t o = 0; o < out; ++o) {
      const double* wo = &w.values()[o * in];
      double acc = b ? (*b)[o] : 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += xs[i] * wo[i];
      y[s * out + o] = acc;
    }
  }
  return y;
}

Tensor conv_forward(const Tensor& x, const Tensor& w, const Tensor* b,
                    std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::size_t wo = (wd + 2 * pad - kw) / stride + 1;
  Tensor y({n, cout, ho, wo});
  const auto xv = x.values();
  const auto wv = w.values();
  auto yv = y.values();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t co = 0; co < cout; ++co) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double acc = b ? (*b)[co] : 0.0;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                        static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                          static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                acc += xv[((s * cin + ci) * h + iy) * wd + ix] *
                       wv[((co * cin + ci) * kh + ky) * kw + kx];
              }
            }
          }
          yv[((s * cout + co) * ho + oy) * wo + ox] = acc;
        }
      }
    }
  }
  return y;
}

// Accumulates dW (and db) and, when dx is non-null, the input gradient.
void conv_backward(const Tensor& x, const Tensor& w, const Tensor& dy,
                   std::size_t stride, std::size_t pad, Tensor& dw, Tensor* db,
                   Tensor* dx) {
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t ho = dy.dim(2), wo = dy.dim(3);
  const auto xv = x.values();
  const auto wv = w.values();
  const auto gv = dy.values();
  auto dwv = dw.values();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t co = 0; co < cout; ++co) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const double g = gv[((s * cout + co) * ho + oy) * wo + ox];
          if (db) (*db)[co] += g;
          if (g == 0.0) continue;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                        static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                          static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                const std::size_t xi = ((s * cin + ci) * h + iy) * wd + ix;
                const std::size_t wi = ((co * cin + ci) * kh + ky) * kw + kx;
                dwv[wi] += g * xv[xi];
                if (dx) (*dx)[xi] += g * wv[wi];
              }
            }
          }
        }
      }
    }
  }
}

json tensor_to_json(const Tensor& t) {
  return json{{"shape", t.shape()}, {"data", t.data()}};
}

Tensor tensor_from_json(const json& doc) {
  return Tensor(doc.at("shape").get<Shape>(), doc.at("data").get<std::vector<double>>());
}

}  // namespace

std::string layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense: return "dense";
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kFlatten: return "flatten";
  }
  return "unknown";
}

LayerKind parse_layer_kind(const std::string& name) {
  if (name == "dense") return LayerKind::kDense;
  if (name == "conv2d") return LayerKind::kConv2d;
  if (name == "relu") return LayerKind::kRelu;
  if (name == "flatten") return LayerKind::kFlatten;
  throw ConfigError("unknown layer kind '" + name + "'");
}

Layer Layer::dense(std::size_t out_features, std::size_t in_features,
                   bool with_bias) {
  Layer l;
  l.kind = LayerKind::kDense;
  l.weight = Tensor({out_features, in_features});
  if (with_bias) l.bias = Tensor({out_features});
  return l;
}

Layer Layer::conv2d(std::size_t out_channels, std::size_t in_channels,
                    std::size_t kernel, std::size_t stride, std::size_t padding,
                    bool with_bias) {
  Layer l;
  l.kind = LayerKind::kConv2d;
  l.weight = Tensor({out_channels, in_channels, kernel, kernel});
  if (with_bias) l.bias = Tensor({out_channels});
  l.stride = stride;
  l.padding = padding;
  return l;
}

Layer Layer::relu() { return Layer{LayerKind::kRelu, {}, std::nullopt, 1, 0}; }

Layer Layer::flatten() {
  return Layer{LayerKind::kFlatten, {}, std::nullopt, 1, 0};
}

Network::Network(Shape input_shape, std::vector<Layer> layers)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  for (std::size_t i = 0; i < layers_.size(); ++i) check_layer(i, layers_[i]);
  const auto shapes = output_shapes(input_shape_);
  const Shape& out = shapes.empty() ? input_shape_ : shapes.back();
  if (out.size() != 1) {
    throw ShapeError("network output must be a vector per sample, got " +
                     shape_string(out));
  }
  num_classes_ = out[0];
}

std::vector<Shape> Network::output_shapes(const Shape& input_shape) const {
  std::vector<Shape> shapes;
  shapes.reserve(layers_.size());
  Shape current = input_shape;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    current = layer_output_shape(i, layers_[i], current);
    shapes.push_back(current);
  }
  return shapes;
}

std::vector<std::size_t> Network::quantizable_layers() const {
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].has_params()) ids.push_back(i);
  }
  return ids;
}

std::size_t Network::parameter_count() const {
  std::size_t count = 0;
  for (const Tensor* p : parameters()) count += p->size();
  return count;
}

std::size_t Network::quantizable_parameter_count() const {
  std::size_t count = 0;
  for (std::size_t id : quantizable_layers()) count += layers_[id].weight.size();
  return count;
}

std::vector<ParamRef> Network::param_refs() const {
  std::vector<ParamRef> refs;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!layers_[i].has_params()) continue;
    refs.push_back({i, false});
    if (layers_[i].bias) refs.push_back({i, true});
  }
  return refs;
}

std::vector<Tensor*> Network::parameters() {
  std::vector<Tensor*> params;
  for (const ParamRef& ref : param_refs()) {
    Layer& l = layers_[ref.layer_id];
    params.push_back(ref.is_bias ? &*l.bias : &l.weight);
  }
  return params;
}

std::vector<const Tensor*> Network::parameters() const {
  std::vector<const Tensor*> params;
  for (const ParamRef& ref : param_refs()) {
    const Layer& l = layers_[ref.layer_id];
    params.push_back(ref.is_bias ? &*l.bias : &l.weight);
  }
  return params;
}

void Network::check_plan(const QuantPlan& plan) const {
  for (const auto& [id, bits] : plan.bits) {
    if (id >= layers_.size() || !layers_[id].has_params()) {
      throw ShapeError("quantization plan names layer " + std::to_string(id) +
                       ", which is not a dense or conv2d layer");
    }
    const auto scopes = layer_scopes(id, layers_[id].weight.shape(), plan.granularity);
    if (bits.size() != scopes.size()) {
      throw ShapeError("quantization plan for layer " + std::to_string(id) +
                       " has " + std::to_string(bits.size()) +
                       " bit-widths, layer has " + std::to_string(scopes.size()) +
                       " scopes");
    }
  }
}

Tensor Network::run(const Tensor& batch, const QuantPlan* plan,
                    Cache* cache) const {
  if (batch.rank() != input_shape_.size() + 1 ||
      !std::equal(input_shape_.begin(), input_shape_.end(),
                  batch.shape().begin() + 1)) {
    throw ShapeError("layer 0 expects batches of " + shape_string(input_shape_) +
                     " samples, got " + shape_string(batch.shape()));
  }
  if (plan) check_plan(*plan);
  const std::size_t n = batch.dim(0);
  if (cache) {
    cache->inputs.clear();
    cache->quantized.clear();
    cache->granularity = plan ? plan->granularity : Granularity::kPerChannel;
    cache->valid = false;
  }
  Tensor x = batch;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& layer = layers_[i];
    if (cache) cache->inputs.push_back(x);
    const Tensor* weight = &layer.weight;
    QuantizedWeight quantized;
    if (plan) {
      if (auto it = plan->bits.find(i); it != plan->bits.end()) {
        quantized = fake_quantize(layer.weight, plan->granularity, it->second);
        weight = &quantized.values;
      }
    }
    const Tensor* bias = layer.bias ? &*layer.bias : nullptr;
    switch (layer.kind) {
      case LayerKind::kDense:
        x = dense_forward(x, *weight, bias);
        break;
      case LayerKind::kConv2d:
        x = conv_forward(x, *weight, bias, layer.stride, layer.padding);
        break;
      case LayerKind::kRelu:
        for (double& v : x.values()) v = v > 0.0 ? v : 0.0;
        break;
      case LayerKind::kFlatten:
        x = x.reshaped({n, x.size() / std::max<std::size_t>(n, 1)});
        break;
    }
    if (cache && weight != &layer.weight) {
      cache->quantized.emplace(i, std::move(quantized));
    }
  }
  if (!x.all_finite()) {
    throw DivergenceError("forward pass produced non-finite logits");
  }
  if (cache) cache->valid = true;
  return x;
}

Tensor Network::forward(const Tensor& batch, const QuantPlan* plan) {
  return run(batch, plan, &cache_);
}

Tensor Network::predict(const Tensor& batch, const QuantPlan* plan) const {
  return run(batch, plan, nullptr);
}

Gradients Network::backward(const Tensor& dlogits) {
  if (!cache_.valid) {
    throw Error("backward called without a cached forward pass");
  }
  const std::size_t n = cache_.inputs.empty() ? 0 : cache_.inputs[0].dim(0);
  if (dlogits.shape() != Shape{n, num_classes_}) {
    throw ShapeError("backward expects dlogits " +
                     shape_string(Shape{n, num_classes_}) + ", got " +
                     shape_string(dlogits.shape()));
  }
  // Gradients per layer, assembled in param_refs() order at the end.
  std::vector<Tensor> dweights(layers_.size());
  std::vector<Tensor> dbiases(layers_.size());
  Gradients grads;
  Tensor dy = dlogits;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const Layer& layer = layers_[k];
    const Tensor& x = cache_.inputs[k];
    const bool need_dx = k > 0;
    const auto q = cache_.quantized.find(k);
    const Tensor& weight = q == cache_.quantized.end() ? layer.weight : q->second.values;
    switch (layer.kind) {
      case LayerKind::kDense: {
        const std::size_t in = weight.dim(1), out = weight.dim(0);
        Tensor dw(weight.shape());
        Tensor db({out});
        Tensor dx(need_dx ? x.shape() : Shape{0});
        for (std::size_t s = 0; s < n; ++s) {
          for (std::size_t o = 0; o < out; ++o) {
            const double g = dy[s * out + o];
            db[o] += g;
            if (g == 0.0) continue;
            for (std::size_t i = 0; i < in; ++i) {
              dw[o * in + i] += g * x[s * in + i];
              if (need_dx) dx[s * in + i] += g * weight[o * in + i];
            }
          }
        }
        dweights[k] = std::move(dw);
        dbiases[k] = std::move(db);
        dy = std::move(dx);
        break;
      }
      case LayerKind::kConv2d: {
        Tensor dw(weight.shape());
        Tensor db({weight.dim(0)});
        Tensor dx(need_dx ? x.shape() : Shape{0});
        conv_backward(x, weight, dy, layer.stride, layer.padding, dw, &db,
                      need_dx ? &dx : nullptr);
        dweights[k] = std::move(dw);
        dbiases[k] = std::move(db);
        dy = std::move(dx);
        break;
      }
      case LayerKind::kRelu: {
        auto dv = dy.values();
        const auto xv = x.values();
        for (std::size_t i = 0; i < dv.size(); ++i) {
          if (xv[i] <= 0.0) dv[i] = 0.0;
        }
        break;
      }
      case LayerKind::kFlatten:
        dy = dy.reshaped(x.shape());
        break;
    }
    if (q != cache_.quantized.end()) {
      auto qg = fake_quantize_backward(layer.weight, q->second,
                                       cache_.granularity, dweights[k]);
      dweights[k] = std::move(qg.weight);
      grads.bits[k] = std::move(qg.bits);
    }
  }
  for (const ParamRef& ref : param_refs()) {
    grads.params.push_back(ref.is_bias ? std::move(dbiases[ref.layer_id])
                                       : std::move(dweights[ref.layer_id]));
  }
  return grads;
}

void Network::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (Layer& layer : layers_) {
    if (!layer.has_params()) continue;
    const std::size_t fan_in = layer.weight.size() / layer.weight.dim(0);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& w : layer.weight.values()) w = dist(rng);
    if (layer.bias) layer.bias->fill(0.0);
  }
  cache_ = Cache{};
}

nlohmann::json Network::to_json() const {
  json layers = json::array();
  for (const Layer& layer : layers_) {
    json entry{{"kind", layer_kind_name(layer.kind)}};
    if (layer.has_params()) {
      entry["weight"] = tensor_to_json(layer.weight);
      entry["bias"] = layer.bias ? tensor_to_json(*layer.bias) : json(nullptr);
    }
    if (layer.kind == LayerKind::kConv2d) {
      entry["stride"] = layer.stride;
      entry["padding"] = layer.padding;
    }
    layers.push_back(std::move(entry));
  }
  return json{{"format", kNetworkFormat},
              {"version", kNetworkFormatVersion},
              {"input_shape", input_shape_},
              {"layers", std::move(layers)}};
}

Network Network::from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != kNetworkFormat) {
      throw IoError("not a network file (format '" +
                    doc.at("format").get<std::string>() + "')");
    }
    if (doc.at("version").get<int>() != kNetworkFormatVersion) {
      throw IoError("unsupported network file version " +
                    std::to_string(doc.at("version").get<int>()));
    }
    std::vector<Layer> layers;
    for (const json& entry : doc.at("layers")) {
      Layer layer;
      layer.kind = parse_layer_kind(entry.at("kind").get<std::string>());
      if (layer.has_params()) {
        layer.weight = tensor_from_json(entry.at("weight"));
        if (!entry.at("bias").is_null()) layer.bias = tensor_from_json(entry.at("bias"));
      }
      if (layer.kind == LayerKind::kConv2d) {
        layer.stride = entry.at("stride").get<std::size_t>();
        layer.padding = entry.at("padding").get<std::size_t>();
      }
      layers.push_back(std::move(layer));
    }
    return Network(doc.at("input_shape").get<Shape>(), std::move(layers));
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed network file: ") + e.what());
  }
}

void Network::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json().dump() << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

Network Network::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw IoError("cannot parse " + path.string() + ": " + e.what());
  }
  return from_json(doc);
}

}  // namespace fairmp
