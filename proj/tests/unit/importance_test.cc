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

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "fairmp/errors.h"
#include "fairmp/importance.h"
#include "fairmp/loss.h"
#include "support/oracles.h"

namespace fairmp {
namespace {

Batch make_batch(Tensor features, std::vector<int> labels, std::vector<int> groups) {
  return Batch{std::move(features), std::move(labels), std::move(groups)};
}

Network tiny_net(std::uint64_t seed) {
  Network net({3}, {Layer::dense(4, 3), Layer::relu(), Layer::dense(2, 4)});
  net.initialize(seed);
  return net;
}

Batch random_batch(std::uint64_t seed, std::size_t n, std::vector<int> groups) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Tensor x({n, 3});
  for (double& v : x.values()) v = normal(rng);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(rng() % 2);
  return make_batch(std::move(x), std::move(labels), std::move(groups));
}

TEST(GroupBatchLoss, AbsentWithoutMembers) {
  const Network net = tiny_net(1);
  const Batch b = random_batch(2, 4, {0, 0, 0, 0});
  EXPECT_FALSE(group_batch_loss(net, b, 1).has_value());
}

TEST(GroupBatchLoss, SingleGroupEqualsBatchLoss) {
  const Network net = tiny_net(1);
  const Batch b = random_batch(3, 5, {1, 1, 1, 1, 1});
  const auto full = loss_cross_entropy(net.predict(b.features), b.labels).loss;
  EXPECT_NEAR(*group_batch_loss(net, b, 1), full, 1e-15);
}

TEST(GroupBatchLoss, MeanOverMembers) {
  // Logits chosen so that the two group-0 samples lose 0.2 and 0.6 nats.
  Layer d = Layer::dense(2, 2, false);
  d.weight.at(0, 0) = 1.0;
  d.weight.at(1, 1) = 1.0;
  Network net({2}, {d});
  auto logits_for = [](double loss) {
    // -log(sigmoid(z)) = loss  =>  z = -log(exp(loss) - 1)
    return -std::log(std::exp(loss) - 1.0);
  };
  Tensor x({3, 2}, {logits_for(0.2), 0.0, logits_for(0.6), 0.0, 5.0, 0.0});
  const Batch b = make_batch(x, {0, 0, 0}, {0, 0, 1});
  EXPECT_NEAR(*group_batch_loss(net, b, 0), 0.4, 1e-12);
}

TEST(Accumulate, ScalarHandDifferentiated) {
  // Two logits z = W x with x = 1, label 0: dL/dW_k = p_k - y_k.
  Layer d = Layer::dense(2, 1, false);
  d.weight[0] = 1.0;
  d.weight[1] = -0.5;
  Network net({1}, {d});
  const Batch b = make_batch(Tensor({1, 1}, {1.0}), {0}, {0});
  const auto raw = accumulate_importance(net, std::span<const Batch>(&b, 1), 1, 1);
  const double p0 = 1.0 / (1.0 + std::exp(-1.5));
  const double g0 = p0 - 1.0, g1 = 1.0 - p0;
  const Tensor& imp = raw.layers.at(0)[0];
  EXPECT_NEAR(imp[0], (g0 * 1.0) * (g0 * 1.0), 1e-15);
  EXPECT_NEAR(imp[1], (g1 * -0.5) * (g1 * -0.5), 1e-15);
}

TEST(Accumulate, ZeroWeightLayerHasZeroImportance) {
  Network net = tiny_net(4);
  net.mutable_layer(2).weight.fill(0.0);
  const Batch b = random_batch(5, 6, {0, 1, 0, 1, 1, 0});
  const auto raw = accumulate_importance(net, std::span<const Batch>(&b, 1), 1, 2);
  for (const auto& t : raw.layers.at(2)) {
    for (double v : t.values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Accumulate, AdditiveOverBatchesAndFrozen) {
  Network net = tiny_net(6);
  const Network before = net;
  const Batch b = random_batch(7, 8, {0, 1, 0, 1, 0, 0, 1, 0});
  const std::vector<Batch> one{b}, two{b, b};
  const auto r1 = accumulate_importance(net, one, 1, 2);
  const auto r2 = accumulate_importance(net, two, 2, 2);
  for (const auto& [id, groups] : r1.layers) {
    for (std::size_t g = 0; g < groups.size(); ++g) {
      for (std::size_t i = 0; i < groups[g].size(); ++i) {
        EXPECT_DOUBLE_EQ(r2.layers.at(id)[g][i], 2.0 * groups[g][i]);
        EXPECT_GE(groups[g][i], 0.0);
      }
    }
  }
  EXPECT_EQ(net, before);
}

TEST(Accumulate, EmptyGroupContributesNothing) {
  Network net = tiny_net(6);
  const Batch b = random_batch(9, 4, {0, 0, 0, 0});
  const auto raw = accumulate_importance(net, std::span<const Batch>(&b, 1), 1, 2);
  for (const auto& [id, groups] : raw.layers) {
    for (double v : groups[1].values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Accumulate, RejectsBadRequests) {
  Network net = tiny_net(6);
  const Batch b = random_batch(9, 4, {0, 1, 2, 0});
  EXPECT_THROW(accumulate_importance(net, std::span<const Batch>(&b, 1), 2, 3), ConfigError);
  EXPECT_THROW(accumulate_importance(net, std::span<const Batch>(&b, 1), 0, 3), ConfigError);
  EXPECT_THROW(accumulate_importance(net, std::span<const Batch>(&b, 1), 1, 2), ConfigError);
}

RawImportance single_dense(std::vector<double> values) {
  RawImportance raw;
  raw.num_groups = 1;
  raw.num_batches = 1;
  raw.layers[0] = {Tensor({2, 2}, std::move(values))};
  return raw;
}

TEST(Aggregate, DenseRowMeansAndFullMean) {
  const auto raw = single_dense({1, 3, 5, 7});
  EXPECT_EQ(aggregate_to_scopes(raw, Granularity::kPerChannel).layers.at(0)[0],
            (std::vector<double>{2.0, 6.0}));
  EXPECT_EQ(aggregate_to_scopes(raw, Granularity::kPerTensor).layers.at(0)[0],
            (std::vector<double>{4.0}));
}

TEST(Aggregate, ConvOnesGiveOnes) {
  RawImportance raw;
  raw.num_groups = 1;
  raw.layers[3] = {Tensor({4, 2, 3, 3}, 1.0)};
  EXPECT_EQ(aggregate_to_scopes(raw, Granularity::kPerChannel).layers.at(3)[0],
            std::vector<double>(4, 1.0));
}

ScopeImportance two_groups(std::vector<double> a, std::vector<double> b) {
  ScopeImportance s;
  s.num_groups = 2;
  s.layers[0] = {std::move(a), std::move(b)};
  return s;
}

TEST(Reduce, SingleGroupIsNormalization) {
  ScopeImportance s;
  s.num_groups = 1;
  s.layers[0] = {{1.0, 3.0}};
  s.layers[2] = {{4.0}};
  const auto r = reduce_groups(s);
  EXPECT_DOUBLE_EQ(r.group_mass[0], 8.0);
  EXPECT_DOUBLE_EQ(r.layers.at(0)[1], 3.0 / (8.0 + kImportanceEpsilon));
  EXPECT_DOUBLE_EQ(r.layers.at(2)[0], 4.0 / (8.0 + kImportanceEpsilon));
}

TEST(Reduce, DisjointGroupsTakeMax) {
  const auto r = reduce_groups(two_groups({1.0, 0.0}, {0.0, 1.0}));
  EXPECT_DOUBLE_EQ(r.layers.at(0)[0], 1.0 / (1.0 + kImportanceEpsilon));
  EXPECT_DOUBLE_EQ(r.layers.at(0)[1], 1.0 / (1.0 + kImportanceEpsilon));
}

TEST(Reduce, GroupScaleInvariance) {
  const auto base = reduce_groups(two_groups({0.2, 0.5, 0.3}, {0.6, 0.1, 0.3}));
  const auto scaled = reduce_groups(two_groups({2.0, 5.0, 3.0}, {0.6, 0.1, 0.3}));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(base.layers.at(0)[i], scaled.layers.at(0)[i], 1e-7);
  }
  // Normalized maps of every group sum to at most 1.
  double total = 0.0;
  for (double v : base.layers.at(0)) total += v;
  EXPECT_LE(total, 2.0);
}

TEST(Importance, JsonRoundTrip) {
  auto s = two_groups({0.2, 0.5}, {0.6, 0.1});
  s.granularity = Granularity::kPerChannel;
  s.num_batches = 50;
  const auto r = reduce_groups(s);
  const auto doc = importance_to_json(s, r);
  EXPECT_EQ(doc.at("num_batches"), 50);
  EXPECT_EQ(doc.at("granularity"), "per-channel");
  const auto back = reduced_importance_from_json(doc);
  EXPECT_EQ(back.layers, r.layers);
  EXPECT_EQ(back.group_mass, r.group_mass);
}

TEST(Importance, DeterministicPipeline) {
  auto run = [] {
    Network net = tiny_net(11);
    std::vector<Batch> stream;
    for (int j = 0; j < 3; ++j) stream.push_back(random_batch(20 + j, 6, {0, 1, 1, 0, 0, 1}));
    return reduce_groups(aggregate_to_scopes(accumulate_importance(net, stream, 3, 2),
                                             Granularity::kPerChannel))
        .layers;
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
}  // namespace fairmp
