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

#ifndef FAIRMP_TESTS_SUPPORT_FIXTURES_H_
#define FAIRMP_TESTS_SUPPORT_FIXTURES_H_

// Hand-tallied confusion fixtures shared by the metrics unit tests and the
// acceptance suite. Expected values were worked out on paper from the
// sample lists below.

#include <cstddef>
#include <string>
#include <vector>

#include "support/oracles.h"

namespace fairmp::fixture {

struct Expected {
  double avg_acc, worst_acc, gap, eopp0, eodd;
  std::vector<std::size_t> eodd_skipped;
  std::vector<std::size_t> empty_groups;
};

struct MetricFixture {
  std::string name;
  oracle::Samples samples;
  Expected expected;
};

namespace detail {

// Appends `count` samples of (label, prediction) for `group`.
inline void add(oracle::Samples& s, int group, int label, int prediction, int count) {
  for (int i = 0; i < count; ++i) {
    s.groups.push_back(group);
    s.labels.push_back(label);
    s.predictions.push_back(prediction);
  }
}

}  // namespace detail

inline std::vector<MetricFixture> metric_fixtures() {
  using detail::add;
  std::vector<MetricFixture> out;

  {  // 100 samples per group at 0.9 and 0.5 accuracy.
    oracle::Samples s;
    add(s, 0, 0, 0, 50);
    add(s, 0, 1, 1, 40);
    add(s, 0, 1, 0, 10);
    add(s, 1, 0, 0, 25);
    add(s, 1, 0, 1, 25);
    add(s, 1, 1, 1, 25);
    add(s, 1, 1, 0, 25);
    out.push_back({"pooled-0.9-0.5", s, {0.7, 0.5, 0.4, 0.4, 0.4, {}, {}}});
  }
  {  // Group 0 perfect, group 1 at TNR 0.5 / TPR 0.5 / FPR 0.5.
    oracle::Samples s;
    add(s, 0, 0, 0, 2);
    add(s, 0, 1, 1, 2);
    add(s, 1, 0, 0, 1);
    add(s, 1, 0, 1, 1);
    add(s, 1, 1, 1, 1);
    add(s, 1, 1, 0, 1);
    out.push_back({"binary-tnr-1.0-0.5", s, {0.75, 0.5, 0.5, 0.5, 0.5, {}, {}}});
  }
  {  // Identical 3-class confusion in both groups.
    oracle::Samples s;
    s.num_classes = 3;
    for (int g = 0; g < 2; ++g) {
      add(s, g, 0, 0, 3);
      add(s, g, 0, 1, 1);
      add(s, g, 1, 1, 2);
      add(s, g, 1, 2, 2);
      add(s, g, 2, 0, 1);
      add(s, g, 2, 2, 3);
    }
    out.push_back({"identical-groups", s, {2.0 / 3.0, 2.0 / 3.0, 0.0, 0.0, 0.0, {}, {}}});
  }
  {  // Group 1 has no samples at all.
    oracle::Samples s;
    add(s, 0, 0, 0, 2);
    add(s, 0, 0, 1, 1);
    add(s, 0, 1, 0, 1);
    add(s, 0, 1, 1, 4);
    out.push_back({"single-group", s, {0.75, 0.75, 0.0, 0.0, 0.0, {}, {1}}});
  }
  {  // Group 1 has no class-2 samples: class 2 drops out of EOdd only.
    oracle::Samples s;
    s.num_classes = 3;
    add(s, 0, 0, 0, 2);
    add(s, 0, 1, 1, 1);
    add(s, 0, 1, 2, 1);
    add(s, 0, 2, 2, 2);
    add(s, 1, 0, 0, 1);
    add(s, 1, 0, 1, 1);
    add(s, 1, 1, 1, 2);
    out.push_back({"missing-class", s, {0.8, 0.75, 5.0 / 6.0 - 0.75, 0.25, 0.375, {2}, {}}});
  }
  return out;
}

}  // namespace fairmp::fixture

#endif  // FAIRMP_TESTS_SUPPORT_FIXTURES_H_
