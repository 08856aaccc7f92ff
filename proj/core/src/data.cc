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

#include "fairmp/data.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "fairmp/digest.h"
#include "fairmp/errors.h"

namespace fairmp {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> bytes, std::size_t offset,
                     std::size_t width) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < width; ++i) {
    v |= static_cast<std::uint64_t>(bytes[offset + i]) << (8 * i);
  }
  return v;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t root, const std::string& name) {
  // FNV-1a of the stream name selects the splitmix stream.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix_seed(root, h);
}

std::span<const double> Dataset::sample(std::size_t i) const {
  const std::size_t f = feature_size();
  return std::span<const double>(features).subspan(i * f, f);
}

Batch Dataset::gather(std::span<const std::size_t> indices) const {
  const std::size_t f = feature_size();
  Shape shape{indices.size()};
  shape.insert(shape.end(), feature_shape.begin(), feature_shape.end());
  Batch batch{Tensor(shape), {}, {}};
  batch.labels.reserve(indices.size());
  batch.groups.reserve(indices.size());
  auto dst = batch.features.values();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto src = sample(indices[k]);
    std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(k * f));
    batch.labels.push_back(labels[indices[k]]);
    batch.groups.push_back(groups[indices[k]]);
  }
  return batch;
}

Batch Dataset::all() const {
  std::vector<std::size_t> idx(size());
  std::iota(idx.begin(), idx.end(), 0);
  return gather(idx);
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out{feature_shape, num_classes, num_groups, {}, {}, {}};
  const std::size_t f = feature_size();
  out.features.reserve(indices.size() * f);
  for (std::size_t i : indices) {
    const auto src = sample(i);
    out.features.insert(out.features.end(), src.begin(), src.end());
    out.labels.push_back(labels[i]);
    out.groups.push_back(groups[i]);
  }
  return out;
}

std::vector<std::size_t> Dataset::group_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_groups), 0);
  for (int g : groups) ++counts[static_cast<std::size_t>(g)];
  return counts;
}

void DatasetSpec::validate() const {
  if (num_classes < 2) throw ConfigError("dataset needs at least 2 classes");
  if (num_groups < 1) throw ConfigError("dataset needs at least 1 group");
  if (group_proportions.size() != static_cast<std::size_t>(num_groups)) {
    throw ConfigError("group_proportions has " +
                      std::to_string(group_proportions.size()) + " entries for " +
                      std::to_string(num_groups) + " groups");
  }
  double sum = 0.0;
  for (double p : group_proportions) {
    if (!(p >= 0.0)) throw ConfigError("group proportions must be non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("group proportions sum to " + std::to_string(sum) + ", not 1");
  }
  if (num_samples < static_cast<std::size_t>(num_classes * num_groups)) {
    throw ConfigError("dataset needs at least classes*groups samples");
  }
  if (feature_shape.empty() || shape_product(feature_shape) == 0) {
    throw ConfigError("feature shape must be non-empty");
  }
  if (shift < 0.0 || shift > 1.0) throw ConfigError("shift must lie in [0, 1]");
  if (noise < 0.0 || class_separation < 0.0) {
    throw ConfigError("noise and class_separation must be non-negative");
  }
}

void to_json(json& j, const DatasetSpec& spec) {
  j = json{{"num_samples", spec.num_samples},
           {"num_classes", spec.num_classes},
           {"num_groups", spec.num_groups},
           {"group_proportions", spec.group_proportions},
           {"shift", spec.shift},
           {"feature_shape", spec.feature_shape},
           {"noise", spec.noise},
           {"class_separation", spec.class_separation},
           {"seed", spec.seed}};
}

void from_json(const json& j, DatasetSpec& spec) {
  DatasetSpec d;
  spec.num_samples = j.value("num_samples", d.num_samples);
  spec.num_classes = j.value("num_classes", d.num_classes);
  spec.num_groups = j.value("num_groups", d.num_groups);
  spec.group_proportions = j.value("group_proportions", d.group_proportions);
  spec.shift = j.value("shift", d.shift);
  spec.feature_shape = j.value("feature_shape", d.feature_shape);
  spec.noise = j.value("noise", d.noise);
  spec.class_separation = j.value("class_separation", d.class_separation);
  spec.seed = j.value("seed", d.seed);
}

std::vector<std::size_t> largest_remainder_counts(std::size_t total,
                                                  std::span<const double> proportions) {
  std::vector<std::size_t> counts(proportions.size(), 0);
  std::vector<double> remainders(proportions.size(), 0.0);
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < proportions.size(); ++k) {
    const double exact = proportions[k] * static_cast<double>(total);
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    remainders[k] = exact - static_cast<double>(counts[k]);
    assigned += counts[k];
  }
  std::vector<std::size_t> order(proportions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return remainders[a] > remainders[b];
  });
  for (std::size_t k = 0; assigned < total && !order.empty(); k = (k + 1) % order.size()) {
    ++counts[order[k]];
    ++assigned;
  }
  return counts;
}

Dataset generate_synthetic(const DatasetSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t f = shape_product(spec.feature_shape);
  const auto classes = static_cast<std::size_t>(spec.num_classes);
  const auto groups = static_cast<std::size_t>(spec.num_groups);

  std::vector<double> prototypes(classes * f);
  for (double& v : prototypes) v = spec.class_separation * normal(rng);
  // Group 0 is the reference population. Group g >= 1 sees the class
  // prototypes mixed with group-specific ones of the same scale:
  // sqrt(1 - shift^2) proto_c + shift z_{c,g}, so shift = 1 gives an
  // unrelated class layout.
  const double keep = std::sqrt(1.0 - spec.shift * spec.shift);
  std::vector<double> offsets(classes * groups * f, 0.0);
  for (std::size_t g = 1; g < groups; ++g) {
    for (std::size_t c = 0; c < classes; ++c) {
      for (std::size_t i = 0; i < f; ++i) {
        offsets[(g * classes + c) * f + i] = (keep - 1.0) * prototypes[c * f + i] +
                                             spec.shift * spec.class_separation * normal(rng);
      }
    }
  }

  const auto group_counts = largest_remainder_counts(spec.num_samples, spec.group_proportions);
  const std::vector<double> uniform(classes, 1.0 / static_cast<double>(classes));
  std::vector<std::pair<int, int>> cells;  // (label, group)
  cells.reserve(spec.num_samples);
  for (std::size_t g = 0; g < groups; ++g) {
    const auto class_counts = largest_remainder_counts(group_counts[g], uniform);
    for (std::size_t c = 0; c < classes; ++c) {
      for (std::size_t k = 0; k < class_counts[c]; ++k) {
        cells.emplace_back(static_cast<int>(c), static_cast<int>(g));
      }
    }
  }
  std::shuffle(cells.begin(), cells.end(), rng);

  Dataset ds{spec.feature_shape, spec.num_classes, spec.num_groups, {}, {}, {}};
  ds.features.resize(spec.num_samples * f);
  for (std::size_t s = 0; s < cells.size(); ++s) {
    const auto [c, g] = cells[s];
    const double* proto = &prototypes[static_cast<std::size_t>(c) * f];
    const double* off = &offsets[(static_cast<std::size_t>(g) * classes + static_cast<std::size_t>(c)) * f];
    for (std::size_t i = 0; i < f; ++i) {
      ds.features[s * f + i] = proto[i] + off[i] + spec.noise * normal(rng);
    }
    ds.labels.push_back(c);
    ds.groups.push_back(g);
  }
  return ds;
}

DatasetSplit split(const Dataset& dataset, std::array<double, 3> fractions,
                   std::uint64_t seed) {
  double sum = 0.0;
  std::size_t nonzero = 0;
  for (double p : fractions) {
    if (!(p >= 0.0)) throw ConfigError("split fractions must be non-negative");
    sum += p;
    nonzero += p > 0.0 ? 1 : 0;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("split fractions sum to " + std::to_string(sum) + ", not 1");
  }
  std::map<std::pair<int, int>, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    cells[{dataset.labels[i], dataset.groups[i]}].push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::array<std::vector<std::size_t>, 3> parts;
  for (auto& [cell, members] : cells) {
    if (members.size() < nonzero) {
      throw ConfigError("cannot stratify cell (label " + std::to_string(cell.first) +
                        ", group " + std::to_string(cell.second) + ") with " +
                        std::to_string(members.size()) + " members over " +
                        std::to_string(nonzero) + " non-empty splits");
    }
    std::shuffle(members.begin(), members.end(), rng);
    auto counts = largest_remainder_counts(members.size(), fractions);
    for (std::size_t k = 0; k < 3; ++k) {
      if (fractions[k] > 0.0 && counts[k] == 0) {
        const auto donor = static_cast<std::size_t>(
            std::max_element(counts.begin(), counts.end()) - counts.begin());
        --counts[donor];
        ++counts[k];
      }
    }
    std::size_t pos = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      parts[k].insert(parts[k].end(), members.begin() + static_cast<std::ptrdiff_t>(pos),
                      members.begin() + static_cast<std::ptrdiff_t>(pos + counts[k]));
      pos += counts[k];
    }
  }
  for (auto& p : parts) std::sort(p.begin(), p.end());
  return {dataset.subset(parts[0]), dataset.subset(parts[1]), dataset.subset(parts[2])};
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t num_samples,
                                                    std::size_t batch_size,
                                                    std::uint64_t shuffle_seed,
                                                    std::size_t epoch) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  std::vector<std::size_t> order(num_samples);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(shuffle_seed, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < num_samples; start += batch_size) {
    const std::size_t end = std::min(num_samples, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

std::vector<Batch> batches(const Dataset& dataset, std::size_t batch_size,
                           std::uint64_t shuffle_seed, std::size_t epoch,
                           const BatchTransform& transform) {
  std::vector<Batch> out;
  for (const auto& idx : batch_indices(dataset.size(), batch_size, shuffle_seed, epoch)) {
    out.push_back(dataset.gather(idx));
    if (transform) transform(out.back());
  }
  return out;
}

std::vector<Batch> calibration_stream(const Dataset& train, std::size_t batch_size,
                                      std::size_t num_batches, std::uint64_t seed) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (train.size() == 0) throw ConfigError("calibration needs a non-empty training split");
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Batch> out;
  std::size_t cursor = 0;
  for (std::size_t b = 0; b < num_batches; ++b) {
    std::vector<std::size_t> idx;
    idx.reserve(batch_size);
    for (std::size_t k = 0; k < batch_size; ++k) {
      idx.push_back(order[cursor]);
      cursor = (cursor + 1) % order.size();
    }
    out.push_back(train.gather(idx));
  }
  return out;
}

std::vector<std::uint8_t> encode_sample_blob(std::span<const double> values,
                                             const Shape& shape) {
  if (shape.empty() || shape.size() > 3 || shape_product(shape) != values.size()) {
    throw ShapeError("sample blobs hold rank 1-3 tensors matching their data");
  }
  std::vector<std::uint8_t> out;
  out.reserve(16 + 8 * values.size());
  put_u16(out, kDtypeF64);
  put_u16(out, static_cast<std::uint16_t>(shape.size()));
  for (std::size_t i = 0; i < 3; ++i) {
    put_u32(out, i < shape.size() ? static_cast<std::uint32_t>(shape[i]) : 0u);
  }
  for (double v : values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

std::vector<double> decode_sample_blob(std::span<const std::uint8_t> bytes, Shape* shape) {
  if (bytes.size() < 16) throw IoError("sample blob shorter than its 16-byte header");
  const auto dtype = static_cast<std::uint16_t>(get_le(bytes, 0, 2));
  const auto rank = static_cast<std::size_t>(get_le(bytes, 2, 2));
  if (rank < 1 || rank > 3) throw IoError("sample blob rank " + std::to_string(rank));
  Shape dims;
  for (std::size_t i = 0; i < rank; ++i) dims.push_back(get_le(bytes, 4 + 4 * i, 4));
  const std::size_t count = shape_product(dims);
  const std::size_t width = dtype == kDtypeF64 ? 8 : dtype == kDtypeF32 ? 4 : 0;
  if (width == 0) throw IoError("unknown sample dtype code " + std::to_string(dtype));
  if (bytes.size() != 16 + width * count) {
    throw IoError("sample blob holds " + std::to_string(bytes.size()) +
                  " bytes, header describes " + std::to_string(16 + width * count));
  }
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t raw = get_le(bytes, 16 + width * i, width);
    values[i] = width == 8 ? std::bit_cast<double>(raw)
                           : static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(raw)));
  }
  if (shape) *shape = dims;
  return values;
}

std::string write_dataset(const fs::path& dir, const Dataset& dataset,
                          const json& metadata) {
  std::error_code ec;
  fs::create_directories(dir / "samples", ec);
  if (ec) throw IoError("cannot create " + (dir / "samples").string() + ": " + ec.message());
  std::ostringstream manifest;
  manifest << "id,label,group,data\n";
  std::vector<std::vector<std::uint8_t>> blobs;
  blobs.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    std::ostringstream name;
    name << "samples/" << std::setw(6) << std::setfill('0') << i << ".bin";
    manifest << i << ',' << dataset.labels[i] << ',' << dataset.groups[i] << ','
             << name.str() << '\n';
    blobs.push_back(encode_sample_blob(dataset.sample(i), dataset.feature_shape));
    write_file(dir / name.str(), blobs.back());
  }
  const std::string text = manifest.str();
  write_file(dir / "manifest.csv",
             std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  Sha256 hash;
  hash.update(text);
  for (const auto& blob : blobs) hash.update(blob);
  const std::string checksum = hash.finish();

  json meta = metadata;
  meta["num_samples"] = dataset.size();
  meta["num_classes"] = dataset.num_classes;
  meta["num_groups"] = dataset.num_groups;
  meta["feature_shape"] = dataset.feature_shape;
  meta["group_counts"] = dataset.group_counts();
  meta["checksum_sha256"] = checksum;
  const std::string meta_text = meta.dump(2) + "\n";
  write_file(dir / "dataset.json",
             std::span(reinterpret_cast<const std::uint8_t*>(meta_text.data()), meta_text.size()));
  return checksum;
}

Dataset read_dataset(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot read dataset manifest " + manifest.string());
  const fs::path root = manifest.parent_path();
  Dataset ds;
  std::string line;
  std::getline(in, line);
  if (line.rfind("id,label,group,data", 0) != 0) {
    throw IoError("manifest " + manifest.string() + " lacks the id,label,group,data header");
  }
  bool have_shape = false;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 4) {
      throw IoError("manifest row " + std::to_string(row) + " has " +
                    std::to_string(fields.size()) + " fields");
    }
    std::vector<double> values;
    Shape shape;
    try {
      ds.labels.push_back(std::stoi(fields[1]));
      ds.groups.push_back(std::stoi(fields[2]));
    } catch (const std::exception&) {
      throw IoError("manifest row " + std::to_string(row) + " has a non-integer label/group");
    }
    if (fields[3].rfind("inline:", 0) == 0) {
      std::istringstream vs(fields[3].substr(7));
      for (double v; vs >> v;) values.push_back(v);
      shape = {values.size()};
    } else {
      values = decode_sample_blob(read_file(root / fields[3]), &shape);
    }
    if (!have_shape) {
      ds.feature_shape = shape;
      have_shape = true;
    } else if (shape_product(shape) != ds.feature_size()) {
      throw IoError("manifest row " + std::to_string(row) + " has feature shape " +
                    shape_string(shape) + ", expected " + shape_string(ds.feature_shape));
    }
    ds.features.insert(ds.features.end(), values.begin(), values.end());
  }
  int max_label = -1, max_group = -1;
  for (int y : ds.labels) max_label = std::max(max_label, y);
  for (int g : ds.groups) max_group = std::max(max_group, g);
  ds.num_classes = max_label + 1;
  ds.num_groups = max_group + 1;
  if (fs::exists(root / "dataset.json")) {
    std::ifstream meta_in(root / "dataset.json");
    try {
      const json meta = json::parse(meta_in);
      ds.num_classes = std::max(ds.num_classes, meta.value("num_classes", 0));
      ds.num_groups = std::max(ds.num_groups, meta.value("num_groups", 0));
      if (meta.contains("feature_shape")) {
        const Shape declared = meta["feature_shape"].get<Shape>();
        if (shape_product(declared) == ds.feature_size()) ds.feature_shape = declared;
      }
    } catch (const json::exception& e) {
      throw IoError("cannot parse " + (root / "dataset.json").string() + ": " + e.what());
    }
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] < 0 || ds.groups[i] < 0) {
      throw IoError("manifest contains negative label or group");
    }
  }
  return ds;
}

}  // namespace fairmp
