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

#include <algorithm>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "fairmp/errors.h"
#include "fairmp/metrics.h"
#include "support/fixtures.h"
#include "support/oracles.h"

namespace fairmp {
namespace {

GroupedConfusion confusion_of(const oracle::Samples& s) {
  return confusion_by_group(s.predictions, s.labels, s.groups,
                            static_cast<std::size_t>(s.num_classes),
                            static_cast<std::size_t>(s.num_groups));
}

TEST(Confusion, HandCounted) {
  // (group, label, prediction)
  const std::vector<int> g{0, 0, 0, 1, 1, 1};
  const std::vector<int> y{0, 1, 1, 0, 0, 1};
  const std::vector<int> p{0, 1, 0, 1, 0, 1};
  const auto c = confusion_by_group(p, y, g, 2, 2);
  EXPECT_EQ(c.count(0, 0, 0), 1u);
  EXPECT_EQ(c.count(0, 1, 1), 1u);
  EXPECT_EQ(c.count(0, 1, 0), 1u);
  EXPECT_EQ(c.count(0, 0, 1), 0u);
  EXPECT_EQ(c.count(1, 0, 1), 1u);
  EXPECT_EQ(c.count(1, 0, 0), 1u);
  EXPECT_EQ(c.count(1, 1, 1), 1u);
  EXPECT_EQ(c.group_correct(0), 2u);
  EXPECT_EQ(c.total(), 6u);
}

TEST(Confusion, PerfectAndEmpty) {
  const std::vector<int> y{0, 1, 2, 2};
  const auto c = confusion_by_group(y, y, std::vector<int>(4, 0), 3, 2);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t q = 0; q < 3; ++q) {
      if (t != q) EXPECT_EQ(c.count(0, t, q), 0u);
      EXPECT_EQ(c.count(1, t, q), 0u);
    }
  EXPECT_EQ(c.group_total(1), 0u);
}

TEST(Confusion, RangeViolations) {
  const std::vector<int> ok{0, 1};
  EXPECT_THROW(confusion_by_group(std::vector<int>{0, 2}, ok, ok, 2, 2), Error);
  EXPECT_THROW(confusion_by_group(ok, ok, std::vector<int>{0, 3}, 2, 2), Error);
  EXPECT_THROW(confusion_by_group(ok, std::vector<int>{0}, ok, 2, 2), Error);
}

TEST(Accuracy, ZeroSamplesRejected) {
  EXPECT_THROW(accuracy_metrics(GroupedConfusion(2, 2)), Error);
}

TEST(Accuracy, GapIsMaxMinusMin) {
  // Three groups at 0.9, 0.8, 0.6: Gap 0.3 differs from AvgAcc - WorstAcc.
  oracle::Samples s;
  s.num_groups = 3;
  auto add = fixture::detail::add;
  add(s, 0, 0, 0, 9);
  add(s, 0, 0, 1, 1);
  add(s, 1, 0, 0, 8);
  add(s, 1, 0, 1, 2);
  add(s, 2, 1, 1, 6);
  add(s, 2, 1, 0, 4);
  const auto r = accuracy_metrics(confusion_of(s));
  EXPECT_NEAR(r.gap, 0.3, 1e-15);
  EXPECT_NEAR(r.avg, 23.0 / 30.0, 1e-15);
  EXPECT_GT(std::fabs(r.gap - (r.avg - r.worst)), 0.1);
}

class FixtureTest : public ::testing::TestWithParam<fixture::MetricFixture> {};

TEST_P(FixtureTest, MatchesHandValues) {
  const auto& f = GetParam();
  const auto conf = confusion_of(f.samples);
  const auto acc = accuracy_metrics(conf);
  EXPECT_NEAR(acc.avg, f.expected.avg_acc, 1e-12);
  EXPECT_NEAR(acc.worst, f.expected.worst_acc, 1e-12);
  EXPECT_NEAR(acc.gap, f.expected.gap, 1e-12);
  EXPECT_EQ(acc.empty_groups, f.expected.empty_groups);
  EXPECT_NEAR(eopp0(conf).value, f.expected.eopp0, 1e-12);
  const auto eo = eodd(conf);
  EXPECT_NEAR(eo.value, f.expected.eodd, 1e-12);
  EXPECT_EQ(eo.skipped_classes, f.expected.eodd_skipped);
  // The brute-force sample-level definitions agree with the tallies.
  EXPECT_NEAR(oracle::eopp0(f.samples), f.expected.eopp0, 1e-12);
  EXPECT_NEAR(oracle::eodd(f.samples), f.expected.eodd, 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Metrics, FixtureTest, ::testing::ValuesIn(fixture::metric_fixtures()),
                         [](const auto& info) {
                           std::string n = info.param.name;
                           std::replace_if(n.begin(), n.end(),
                                           [](char c) { return !std::isalnum(c); }, '_');
                           return n;
                         });

oracle::Samples random_samples(std::mt19937_64& rng) {
  oracle::Samples s;
  s.num_classes = 2 + static_cast<int>(rng() % 3);
  s.num_groups = 2 + static_cast<int>(rng() % 3);
  const std::size_t n = 20 + rng() % 200;
  for (std::size_t i = 0; i < n; ++i) {
    s.groups.push_back(static_cast<int>(rng() % s.num_groups));
    s.labels.push_back(static_cast<int>(rng() % s.num_classes));
    // Group-dependent error rate so gaps are non-trivial.
    const bool wrong = rng() % 10 < static_cast<unsigned>(2 + 2 * s.groups.back());
    s.predictions.push_back(wrong ? static_cast<int>(rng() % s.num_classes) : s.labels.back());
  }
  return s;
}

TEST(Properties, GroupPermutationInvarianceAndOracle) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_samples(rng);
    std::vector<int> perm(static_cast<std::size_t>(s.num_groups));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto t = s;
    for (int& g : t.groups) g = perm[static_cast<std::size_t>(g)];

    const auto a = confusion_of(s), b = confusion_of(t);
    const auto acc_a = accuracy_metrics(a), acc_b = accuracy_metrics(b);
    EXPECT_EQ(acc_a.avg, acc_b.avg);
    EXPECT_EQ(acc_a.worst, acc_b.worst);
    EXPECT_EQ(acc_a.gap, acc_b.gap);
    EXPECT_EQ(eopp0(a).value, eopp0(b).value);
    EXPECT_EQ(eodd(a).value, eodd(b).value);

    EXPECT_NEAR(eopp0(a).value, oracle::eopp0(s), 1e-12);
    EXPECT_NEAR(eodd(a).value, oracle::eodd(s), 1e-12);
    const auto groups = oracle::group_accuracies(s);
    const auto [lo, hi] = std::minmax_element(groups.begin(), groups.end());
    EXPECT_NEAR(acc_a.worst, *lo, 1e-12);
    EXPECT_NEAR(acc_a.gap, *hi - *lo, 1e-12);
    EXPECT_GE(eopp0(a).value, 0.0);
    EXPECT_LE(eodd(a).value, 1.0);
  }
}

TEST(Gbops, DenseExample) {
  const Network net({20}, {Layer::dense(10, 20)});
  EXPECT_NEAR(gbops(net, {20}, uniform_assignment(net, Granularity::kPerTensor, 4), 32),
              2.56e-5, 1e-18);
  EXPECT_NEAR(gbops(net, {20}, uniform_assignment(net, Granularity::kPerChannel, 4), 32),
              2.56e-5, 1e-18);
}

TEST(Gbops, ConvMacs) {
  const Network net({3, 5, 5}, {Layer::conv2d(8, 3, 3), Layer::flatten()});
  // 3 * 3 * 3 inputs per output pixel, 3 x 3 output map, 8 channels.
  const double macs = 8.0 * 27.0 * 9.0;
  EXPECT_DOUBLE_EQ(gbops(net, {3, 5, 5}, uniform_assignment(net, Granularity::kPerTensor, 8), 8),
                   macs * 64.0 / 1e9);
}

TEST(Gbops, NoQuantizableLayers) {
  const Network net({2, 2}, {Layer::flatten(), Layer::relu()});
  EXPECT_EQ(gbops(net, {2, 2}, uniform_assignment(net, Granularity::kPerChannel, 8), 32), 0.0);
}

TEST(Gbops, Linearity) {
  const Network net({2, 6, 6}, {Layer::conv2d(4, 2, 3, 1, 1), Layer::relu(), Layer::flatten(),
                                Layer::dense(5, 144), Layer::dense(3, 5)});
  const Shape in{2, 6, 6};
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = uniform_assignment(net, Granularity::kPerChannel, 2);
    for (int& b : a.bits) b = 2 + static_cast<int>(rng() % 7);
    const double base = gbops(net, in, a, 16);
    auto doubled = a;
    for (int& b : doubled.bits) b *= 2;
    EXPECT_DOUBLE_EQ(gbops(net, in, doubled, 16), 2.0 * base);
    EXPECT_DOUBLE_EQ(gbops(net, in, a, 32), 2.0 * base);
    // Additivity across scopes: one extra bit on scope k adds that scope's MACs.
    const std::size_t k = rng() % a.bits.size();
    auto bumped = a;
    bumped.bits[k] += 1;
    auto single = a;
    std::fill(single.bits.begin(), single.bits.end(), 0);
    single.bits[k] = 1;
    EXPECT_NEAR(gbops(net, in, bumped, 16) - base, gbops(net, in, single, 16), 1e-15);
  }
}

TEST(Evaluate, FullPrecisionMatchesPredict) {
  DatasetSpec spec;
  spec.num_samples = 40;
  spec.feature_shape = {6};
  spec.seed = 3;
  const Dataset data = generate_synthetic(spec);
  Network net({6}, {Layer::dense(4, 6)});
  net.initialize(5);
  const auto r = evaluate(net, data, std::nullopt, 32, 7);
  const Batch all = data.all();
  const Tensor logits = net.predict(all.features);
  oracle::Samples s;
  s.num_classes = 4;
  s.labels = all.labels;
  s.groups = all.groups;
  for (std::size_t i = 0; i < data.size(); ++i) {
    int best = 0;
    for (int c = 1; c < 4; ++c)
      if (logits.at(i, static_cast<std::size_t>(c)) > logits.at(i, static_cast<std::size_t>(best)))
        best = c;
    s.predictions.push_back(best);
  }
  const auto acc = oracle::group_accuracies(s);
  EXPECT_EQ(r.avg_bits, 32.0);
  EXPECT_NEAR(r.worst_acc, *std::min_element(acc.begin(), acc.end()), 1e-12);
  EXPECT_NEAR(r.eodd, oracle::eodd(s), 1e-12);
  EXPECT_NEAR(r.eopp0, oracle::eopp0(s), 1e-12);
  const auto flat = r.to_json();
  for (const char* key : {"AvgBits", "GBOPs", "AvgAcc", "WorstAcc", "Gap", "EOpp0", "EOdd"}) {
    EXPECT_TRUE(flat.contains(key)) << key;
  }
  EXPECT_EQ(MetricsReport::from_json(flat).to_json(), flat);
}

}  // namespace
}  // namespace fairmp
