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

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "fairmp/data.h"
#include "fairmp/digest.h"
#include "fairmp/errors.h"

namespace fairmp {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("fairmp-data-test-" + name);
  fs::remove_all(dir);
  return dir;
}

DatasetSpec spec_with(std::size_t n, std::uint64_t seed) {
  DatasetSpec s;
  s.num_samples = n;
  s.seed = seed;
  return s;
}

TEST(LargestRemainder, Examples) {
  EXPECT_EQ(largest_remainder_counts(1000, std::vector<double>{0.8, 0.2}),
            (std::vector<std::size_t>{800, 200}));
  EXPECT_EQ(largest_remainder_counts(10, std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3}),
            (std::vector<std::size_t>{4, 3, 3}));
  EXPECT_EQ(largest_remainder_counts(7, std::vector<double>{0.5, 0.5}),
            (std::vector<std::size_t>{4, 3}));
}

TEST(Generate, GroupCountsExact) {
  const Dataset d = generate_synthetic(spec_with(1000, 1));
  EXPECT_EQ(d.group_counts(), (std::vector<std::size_t>{800, 200}));
  EXPECT_EQ(d.size(), 1000u);
  EXPECT_EQ(d.features.size(), 1000u * 64u);
  std::map<int, int> per_class;
  for (int y : d.labels) ++per_class[y];
  for (const auto& [c, n] : per_class) EXPECT_EQ(n, 250);
}

TEST(Generate, DeterministicPerSeed) {
  EXPECT_EQ(generate_synthetic(spec_with(300, 5)), generate_synthetic(spec_with(300, 5)));
  EXPECT_NE(generate_synthetic(spec_with(300, 5)).features,
            generate_synthetic(spec_with(300, 6)).features);
}

// With shift 0 the two groups share one distribution: class means per group
// agree up to sampling noise.
TEST(Generate, ZeroShiftGroupsExchangeable) {
  DatasetSpec s = spec_with(4000, 9);
  s.shift = 0.0;
  s.group_proportions = {0.5, 0.5};
  EXPECT_TRUE(s.balanced());
  const Dataset d = generate_synthetic(s);
  const std::size_t f = d.feature_size();
  std::vector<double> mean(2 * 4 * f, 0.0);
  std::vector<int> count(2 * 4, 0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const std::size_t cell = static_cast<std::size_t>(d.groups[i] * 4 + d.labels[i]);
    ++count[cell];
    for (std::size_t k = 0; k < f; ++k) mean[cell * f + k] += d.features[i * f + k];
  }
  double worst = 0.0;
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t k = 0; k < f; ++k) {
      const double a = mean[c * f + k] / count[c];
      const double b = mean[(4 + c) * f + k] / count[4 + c];
      worst = std::max(worst, std::fabs(a - b));
    }
  }
  // 500 samples per cell, unit noise: 6 standard errors of a difference.
  EXPECT_LT(worst, 6.0 * std::sqrt(2.0 / 500.0));
}

TEST(Generate, InvalidSpecs) {
  DatasetSpec s;
  s.group_proportions = {0.7, 0.2};
  EXPECT_THROW(generate_synthetic(s), ConfigError);
  s = DatasetSpec{};
  s.shift = 1.5;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
  s = DatasetSpec{};
  s.num_samples = 5;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
  s = DatasetSpec{};
  s.group_proportions = {1.0};
  EXPECT_THROW(generate_synthetic(s), ConfigError);
}

TEST(DatasetSpecJson, RoundTrip) {
  DatasetSpec s = spec_with(123, 77);
  s.shift = 0.25;
  s.feature_shape = {3, 4};
  const nlohmann::json j = s;
  const DatasetSpec back = j.get<DatasetSpec>();
  EXPECT_EQ(nlohmann::json(back), j);
}

TEST(Split, FullTrainIsIdentity) {
  const Dataset d = generate_synthetic(spec_with(200, 2));
  const auto parts = split(d, {1.0, 0.0, 0.0}, 3);
  EXPECT_EQ(parts.train, d);
  EXPECT_EQ(parts.validation.size(), 0u);
  EXPECT_EQ(parts.test.size(), 0u);
}

TEST(Split, StratifiedWithinOnePerCell) {
  DatasetSpec s = spec_with(800, 4);
  s.group_proportions = {0.5, 0.5};
  const Dataset d = generate_synthetic(s);
  const auto parts = split(d, {0.6, 0.2, 0.2}, 5);
  auto cells = [](const Dataset& x) {
    std::map<std::pair<int, int>, int> m;
    for (std::size_t i = 0; i < x.size(); ++i) ++m[{x.labels[i], x.groups[i]}];
    return m;
  };
  const auto all = cells(d);
  const std::array<const Dataset*, 3> ps{&parts.train, &parts.validation, &parts.test};
  const std::array<double, 3> fr{0.6, 0.2, 0.2};
  for (std::size_t k = 0; k < 3; ++k) {
    const auto got = cells(*ps[k]);
    for (const auto& [cell, n] : all) {
      EXPECT_LE(std::fabs(got.at(cell) - fr[k] * n), 1.0);
    }
  }
  EXPECT_EQ(parts.train.size() + parts.validation.size() + parts.test.size(), d.size());
}

TEST(Split, SeedPermutesMembershipKeepsCounts) {
  const Dataset d = generate_synthetic(spec_with(400, 6));
  const auto a = split(d, {0.6, 0.2, 0.2}, 1), b = split(d, {0.6, 0.2, 0.2}, 2);
  EXPECT_EQ(a.train.size(), b.train.size());
  EXPECT_EQ(a.train.group_counts(), b.train.group_counts());
  EXPECT_NE(a.train.features, b.train.features);
  const auto c = split(d, {0.6, 0.2, 0.2}, 1);
  EXPECT_EQ(a.test, c.test);
}

TEST(Split, ImpossibleCellNamed) {
  Dataset d;
  d.feature_shape = {1};
  d.num_classes = 2;
  d.num_groups = 1;
  d.features = {0.0, 1.0, 2.0};
  d.labels = {0, 0, 1};
  d.groups = {0, 0, 0};
  try {
    split(d, {0.6, 0.2, 0.2}, 1);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("label 0, group 0"), std::string::npos) << e.what();
  }
  EXPECT_THROW(split(d, {0.6, 0.2, 0.3}, 1), ConfigError);
}

TEST(Batches, SizesAndDeterminism) {
  const auto idx = batch_indices(10, 4, 1, 0);
  ASSERT_EQ(idx.size(), 3u);
  EXPECT_EQ(idx[0].size(), 4u);
  EXPECT_EQ(idx[1].size(), 4u);
  EXPECT_EQ(idx[2].size(), 2u);
  std::set<std::size_t> seen;
  for (const auto& b : idx) seen.insert(b.begin(), b.end());
  EXPECT_EQ(seen.size(), 10u);
  EXPECT_EQ(batch_indices(10, 50, 1, 0).size(), 1u);
  EXPECT_EQ(batch_indices(10, 4, 1, 0), idx);
  EXPECT_NE(batch_indices(100, 10, 1, 1), batch_indices(100, 10, 1, 0));
  EXPECT_THROW(batch_indices(10, 0, 1, 0), ConfigError);
}

TEST(Batches, GroupHistogramSumsAndTransformHook) {
  const Dataset d = generate_synthetic(spec_with(90, 8));
  int calls = 0;
  const auto bs = batches(d, 16, 3, 0, [&](Batch& b) {
    ++calls;
    for (double& v : b.features.values()) v = 0.0;
  });
  EXPECT_EQ(calls, 6);
  std::size_t total = 0;
  for (const auto& b : bs) {
    EXPECT_EQ(b.groups.size(), b.size());
    EXPECT_EQ(b.features.dim(0), b.size());
    for (double v : b.features.values()) EXPECT_EQ(v, 0.0);
    total += b.size();
  }
  EXPECT_EQ(total, 90u);
}

TEST(Calibration, CyclesWithoutReplacement) {
  const Dataset d = generate_synthetic(spec_with(40, 10));
  const auto one = calibration_stream(d, 8, 1, 4);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].size(), 8u);
  // 5 batches of 8 cover all 40 samples exactly once; the 6th starts over.
  const auto stream = calibration_stream(d, 8, 6, 4);
  std::multiset<double> firsts;
  for (std::size_t b = 0; b < 5; ++b)
    for (std::size_t i = 0; i < 8; ++i) firsts.insert(stream[b].features[i * 64]);
  std::multiset<double> expected;
  for (std::size_t i = 0; i < 40; ++i) expected.insert(d.sample(i)[0]);
  EXPECT_EQ(firsts, expected);
  EXPECT_EQ(stream[5].features, stream[0].features);
  EXPECT_EQ(calibration_stream(d, 8, 6, 4)[3].labels, stream[3].labels);
}

TEST(Blob, RoundTripAndHeader) {
  const std::vector<double> v{1.5, -2.25, 3.0, 0.0, 1e-300, -7.0};
  const auto bytes = encode_sample_blob(v, {1, 2, 3});
  ASSERT_EQ(bytes.size(), 16u + 6u * 8u);
  EXPECT_EQ(bytes[0], kDtypeF64);
  EXPECT_EQ(bytes[1], 0);
  EXPECT_EQ(bytes[2], 3);  // rank
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[8], 2);
  EXPECT_EQ(bytes[12], 3);
  Shape shape;
  EXPECT_EQ(decode_sample_blob(bytes, &shape), v);
  EXPECT_EQ(shape, (Shape{1, 2, 3}));
}

TEST(Blob, Float32AndCorruption) {
  std::vector<std::uint8_t> bytes(16 + 8, 0);
  bytes[0] = kDtypeF32;
  bytes[2] = 1;
  bytes[4] = 2;
  const float a = 0.5f, b = -4.0f;
  std::memcpy(&bytes[16], &a, 4);
  std::memcpy(&bytes[20], &b, 4);
  EXPECT_EQ(decode_sample_blob(bytes), (std::vector<double>{0.5, -4.0}));
  bytes.pop_back();
  EXPECT_THROW(decode_sample_blob(bytes), IoError);
  EXPECT_THROW(decode_sample_blob(std::vector<std::uint8_t>(10, 0)), IoError);
  bytes.assign(24, 0);
  bytes[0] = 9;
  bytes[2] = 1;
  bytes[4] = 1;
  EXPECT_THROW(decode_sample_blob(bytes), IoError);
}

TEST(DiskFormat, WriteReadRoundTrip) {
  const fs::path dir = scratch_dir("roundtrip");
  const Dataset d = generate_synthetic(spec_with(50, 12));
  const auto sum1 = write_dataset(dir, d, {{"note", "x"}});
  EXPECT_EQ(sum1.size(), 64u);
  EXPECT_EQ(read_dataset(dir / "manifest.csv"), d);
  const fs::path dir2 = scratch_dir("roundtrip2");
  EXPECT_EQ(write_dataset(dir2, d, {{"note", "x"}}), sum1);
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST(DiskFormat, InlineRowsAndErrors) {
  const fs::path dir = scratch_dir("inline");
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "manifest.csv");
    out << "id,label,group,data\n0,1,0,inline:0.5 1.5\n1,0,1,inline:-1 2\n";
  }
  const Dataset d = read_dataset(dir / "manifest.csv");
  EXPECT_EQ(d.size(), 2u);
  EXPECT_EQ(d.feature_shape, (Shape{2}));
  EXPECT_EQ(d.features, (std::vector<double>{0.5, 1.5, -1.0, 2.0}));
  EXPECT_EQ(d.num_classes, 2);
  EXPECT_EQ(d.num_groups, 2);
  {
    std::ofstream out(dir / "manifest.csv");
    out << "id,label\n0,1\n";
  }
  EXPECT_THROW(read_dataset(dir / "manifest.csv"), IoError);
  EXPECT_THROW(read_dataset(dir / "missing.csv"), IoError);
  fs::remove_all(dir);
}

// Default spec written to disk; checksum frozen from the first release.
TEST(DiskFormat, GoldenChecksum) {
  const fs::path dir = scratch_dir("golden");
  const DatasetSpec s;
  const auto sum = write_dataset(dir, generate_synthetic(s), nlohmann::json(s));
  EXPECT_EQ(read_dataset(dir / "manifest.csv").size(), 4000u);
  EXPECT_EQ(sum, "3e72f539ebaa962f9675c22c4fa0aa562fc944f09a90d460a4c6a7d53b4d8662");
  fs::remove_all(dir);
}

TEST(Seeds, MixAndDerive) {
  EXPECT_EQ(mix_seed(1, 2), mix_seed(1, 2));
  EXPECT_NE(mix_seed(1, 2), mix_seed(1, 3));
  EXPECT_NE(mix_seed(1, 2), mix_seed(2, 2));
  EXPECT_EQ(derive_seed(7, "split"), derive_seed(7, "split"));
  EXPECT_NE(derive_seed(7, "split"), derive_seed(7, "init"));
}

}  // namespace
}  // namespace fairmp
