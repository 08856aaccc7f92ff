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
#include <set>

#include <gtest/gtest.h>

#include "fairmp/errors.h"
#include "fairmp/net.h"
#include "fairmp/quantizer.h"
#include "support/oracles.h"

namespace fairmp {
namespace {

std::vector<double> random_scope(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> normal(0.0, std::exp(std::uniform_real_distribution<double>(-5, 2)(rng)));
  std::vector<double> w(n);
  for (double& v : w) v = normal(rng);
  return w;
}

TEST(Scopes, DensePerChannel) {
  Network net({3}, {Layer::dense(4, 3)});
  const auto scopes = enumerate_scopes(net, Granularity::kPerChannel);
  ASSERT_EQ(scopes.size(), 4u);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_EQ(scopes[c].size, 3u);
    EXPECT_EQ(scopes[c].channel, c);
    EXPECT_EQ(scopes[c].offset, 3 * c);
  }
}

TEST(Scopes, ConvPerTensor) {
  Network net({3, 5, 5}, {Layer::conv2d(8, 3, 3), Layer::flatten()});
  const auto scopes = enumerate_scopes(net, Granularity::kPerTensor);
  ASSERT_EQ(scopes.size(), 1u);
  EXPECT_EQ(scopes[0].size, 216u);
  EXPECT_FALSE(scopes[0].channel.has_value());
}

TEST(Scopes, CountIsSumOfOutputChannels) {
  Network net({2, 6, 6}, {Layer::conv2d(5, 2, 3), Layer::relu(), Layer::flatten(),
                          Layer::dense(7, 80), Layer::dense(3, 7)});
  const auto scopes = enumerate_scopes(net, Granularity::kPerChannel);
  EXPECT_EQ(scopes.size(), 5u + 7u + 3u);
  std::size_t total = 0;
  for (std::size_t k = 0; k < scopes.size(); ++k) {
    total += scopes[k].size;
    if (k > 0) {
      const bool ordered = scopes[k - 1].layer_id < scopes[k].layer_id ||
                           (scopes[k - 1].layer_id == scopes[k].layer_id &&
                            *scopes[k - 1].channel < *scopes[k].channel);
      EXPECT_TRUE(ordered);
    }
  }
  EXPECT_EQ(total, net.quantizable_parameter_count());
}

TEST(Scale, Examples) {
  EXPECT_EQ(compute_scale(std::vector<double>{0.0, 0.0}, 5), kScaleEpsilon);
  EXPECT_DOUBLE_EQ(compute_scale(std::vector<double>{-1.0, 0.3, 0.7}, 4), 1.0 / 7.0);
  EXPECT_DOUBLE_EQ(compute_scale(std::vector<double>{0.5, -0.5}, 2), 0.5);
  EXPECT_THROW(qmax_for_bits(1), ConfigError);
}

TEST(QuantizeDequantize, WorkedExample) {
  const auto q = quantize_dequantize(std::vector<double>{-1.0, 0.3, 0.7}, 4, 1.0 / 7.0);
  EXPECT_DOUBLE_EQ(q[0], -1.0);
  EXPECT_DOUBLE_EQ(q[1], 2.0 / 7.0);
  EXPECT_DOUBLE_EQ(q[2], 5.0 / 7.0);
}

TEST(QuantizeDequantize, ZeroInputStaysZero) {
  const std::vector<double> zeros(6, 0.0);
  const auto q = quantize_dequantize(zeros, 3, compute_scale(zeros, 3));
  EXPECT_EQ(q, zeros);
}

TEST(QuantizeDequantize, TiesRoundAwayFromZero) {
  const auto q = quantize_dequantize(std::vector<double>{0.25, -0.25, 0.75, -0.75}, 4, 0.5);
  EXPECT_EQ(q, (std::vector<double>{0.5, -0.5, 1.0, -1.0}));
}

TEST(QuantizeDequantize, Properties) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const int bits = 2 + trial % 7;
    auto w = random_scope(rng, 1 + trial % 40);
    const double s = compute_scale(w, bits);
    const double q = qmax_for_bits(bits);
    const auto out = quantize_dequantize(w, bits, s);
    // Bit-exact against the scalar reference.
    EXPECT_EQ(out, oracle::quantize_scope(w, bits));
    // Idempotence.
    EXPECT_EQ(quantize_dequantize(out, bits, s), out);
    std::set<double> levels(out.begin(), out.end());
    EXPECT_LE(levels.size(), static_cast<std::size_t>(2 * q + 1));
    for (std::size_t i = 0; i < w.size(); ++i) {
      EXPECT_LE(std::fabs(out[i]), q * s * (1 + 1e-15));
      if (std::fabs(w[i]) <= q * s) EXPECT_LE(std::fabs(out[i] - w[i]), s / 2 * (1 + 1e-12));
      for (std::size_t j = 0; j < w.size(); ++j) {
        if (w[i] <= w[j]) EXPECT_LE(out[i], out[j]);
      }
    }
  }
}

TEST(QuantizeDequantize, StaleScaleClips) {
  const auto q = quantize_dequantize(std::vector<double>{2.0, -3.0, 0.1}, 4, 0.1);
  EXPECT_DOUBLE_EQ(q[0], 0.7);
  EXPECT_DOUBLE_EQ(q[1], -0.7);
  EXPECT_DOUBLE_EQ(q[2], 0.1);
}

TEST(Ste, FreshScaleKeepsEveryWeight) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int bits = 2 + trial % 7;
    const auto w = random_scope(rng, 17);
    const std::vector<double> up(w.size(), 1.0);
    const auto g = ste_backward(up, w, bits, compute_scale(w, bits));
    EXPECT_EQ(g, up);
  }
}

TEST(Ste, StaleScaleExample) {
  const auto g = ste_backward(std::vector<double>{3.0, -2.0}, std::vector<double>{2.0, 0.1}, 4, 0.1);
  EXPECT_EQ(g, (std::vector<double>{0.0, -2.0}));
}

TEST(Ste, ZeroUpstream) {
  const auto g = ste_backward(std::vector<double>{0.0, 0.0}, std::vector<double>{2.0, 0.1}, 4, 0.1);
  EXPECT_EQ(g, (std::vector<double>{0.0, 0.0}));
}

TEST(FakeQuantize, PerChannelMatchesReferencePerRow) {
  std::mt19937_64 rng(9);
  Tensor w({4, 3, 2, 2});
  std::normal_distribution<double> n(0.0, 0.2);
  for (double& v : w.values()) v = n(rng);
  const std::vector<int> bits{2, 3, 5, 8};
  const auto q = fake_quantize(w, Granularity::kPerChannel, bits);
  for (std::size_t c = 0; c < 4; ++c) {
    const std::vector<double> row(w.data().begin() + c * 12, w.data().begin() + (c + 1) * 12);
    const auto ref = oracle::quantize_scope(row, bits[c]);
    for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(q.values[c * 12 + i], ref[i]);
    EXPECT_EQ(q.scales[c], oracle::scope_scale(row, bits[c]));
  }
  EXPECT_THROW(fake_quantize(w, Granularity::kPerChannel, std::vector<int>{4, 4}), ShapeError);
}

// Bit gradient: dL/db through s(b) checked against a finite difference of
// the quantizer with the integer code n = round(w / s) held fixed.
TEST(FakeQuantize, BitGradientMatchesFixedCodeDifference) {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> n(0.0, 0.5);
  for (int bits = 2; bits <= 8; ++bits) {
    Tensor w({3, 5});
    for (double& v : w.values()) v = n(rng);
    Tensor up({3, 5});
    for (double& v : up.values()) v = n(rng);
    const std::vector<int> b(3, bits);
    const auto q = fake_quantize(w, Granularity::kPerChannel, b);
    const auto g = fake_quantize_backward(w, q, Granularity::kPerChannel, up);
    for (std::size_t c = 0; c < 3; ++c) {
      const std::vector<double> row(w.data().begin() + c * 5, w.data().begin() + (c + 1) * 5);
      const double m = *std::max_element(row.begin(), row.end(), [](double a, double x) {
        return std::fabs(a) < std::fabs(x);
      });
      auto surrogate = [&](double bc) {
        // Q(b) = s(b) * n + (w - s0 * n) keeps the rounding residual frozen.
        const double s0 = std::fabs(m) / (std::pow(2.0, bits - 1) - 1);
        const double s = std::fabs(m) / (std::pow(2.0, bc - 1) - 1);
        double total = 0.0;
        for (std::size_t i = 0; i < 5; ++i) {
          const double code = std::clamp(oracle::round_half_away(row[i] / s0),
                                         -(std::pow(2.0, bits - 1) - 1), std::pow(2.0, bits - 1) - 1);
          total += up[c * 5 + i] * s * (code - row[i] / s0) ;
        }
        return total;
      };
      const double h = 1e-6;
      const double fd = (surrogate(bits + h) - surrogate(bits - h)) / (2 * h);
      EXPECT_NEAR(g.bits[c], fd, 1e-6 * std::max(1.0, std::fabs(fd))) << "bits " << bits;
    }
  }
}

TEST(Granularity, ParseRoundTrip) {
  EXPECT_EQ(parse_granularity("per-channel"), Granularity::kPerChannel);
  EXPECT_EQ(granularity_name(Granularity::kPerTensor), "per-tensor");
  EXPECT_THROW(parse_granularity("per-row"), ConfigError);
}

}  // namespace
}  // namespace fairmp
