// Copyright 2026 The fedsim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fedsim/datasets.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <string>

#include "fedsim/random.hpp"

namespace fedsim {

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::string hex32(std::uint32_t v) {
  char buf[11];
  std::snprintf(buf, sizeof(buf), "0x%08X", v);
  return buf;
}

std::vector<std::uint8_t> gunzip_file(const std::filesystem::path& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (f == nullptr) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> out;
  std::uint8_t chunk[1 << 16];
  int n = 0;
  while ((n = gzread(f, chunk, sizeof(chunk))) > 0) out.insert(out.end(), chunk, chunk + n);
  int err = Z_OK;
  const char* msg = gzerror(f, &err);
  gzclose(f);
  if (n < 0 || (err != Z_OK && err != Z_STREAM_END)) {
    throw FormatError("gzip decode failed for " + path.string() + ": " + msg);
  }
  return out;
}

std::filesystem::path find_variant(const std::filesystem::path& dir, const std::string& stem) {
  for (const auto& name : {stem, stem + ".gz"}) {
    auto p = dir / name;
    if (std::filesystem::exists(p)) return p;
  }
  // Some mirrors use a dot instead of a dash before "idx".
  std::string dotted = stem;
  if (auto pos = dotted.rfind("-idx"); pos != std::string::npos) dotted[pos] = '.';
  for (const auto& name : {dotted, dotted + ".gz"}) {
    auto p = dir / name;
    if (std::filesystem::exists(p)) return p;
  }
  throw IoError("MNIST file '" + stem + "' not found under " + dir.string());
}

}  // namespace

void Dataset::validate(int num_classes) const {
  if (size() < 1) throw ValidationError("dataset is empty");
  if (static_cast<std::size_t>(size()) != labels.size()) {
    throw StructuralError("dataset has " + std::to_string(size()) + " rows but " +
                          std::to_string(labels.size()) + " labels");
  }
  if (!features.allFinite() || features.minCoeff() < 0.0f || features.maxCoeff() > 1.0f) {
    throw ValidationError("dataset features must be finite and within [0, 1]");
  }
  for (int l : labels) {
    if (l < 0 || l >= num_classes) {
      throw ValidationError("label " + std::to_string(l) + " outside [0, " +
                            std::to_string(num_classes) + ")");
    }
  }
}

Dataset Dataset::select(std::span<const Eigen::Index> rows) const {
  Dataset out;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), dim());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = features.row(rows[i]);
    out.labels.push_back(labels[static_cast<std::size_t>(rows[i])]);
  }
  return out;
}

Dataset Dataset::head(Eigen::Index n) const {
  n = std::min(n, size());
  Dataset out;
  out.features = features.topRows(n);
  out.labels.assign(labels.begin(), labels.begin() + n);
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() >= 2 && bytes[0] == 0x1F && bytes[1] == 0x8B) return gunzip_file(path);
  return bytes;
}

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw FormatError("IDX image file truncated in header");
  const auto magic = read_be32(bytes, 0);
  if (magic != kIdxImageMagic) {
    throw FormatError("IDX image magic mismatch: expected " + hex32(kIdxImageMagic) + ", got " +
                      hex32(magic));
  }
  IdxImages img;
  img.count = read_be32(bytes, 4);
  img.rows = read_be32(bytes, 8);
  img.cols = read_be32(bytes, 12);
  const std::uint64_t expected = std::uint64_t{img.count} * img.rows * img.cols;
  if (bytes.size() - 16 < expected) {
    throw FormatError("IDX image file truncated: expected " + std::to_string(expected) +
                      " pixel bytes, found " + std::to_string(bytes.size() - 16));
  }
  img.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(expected));
  return img;
}

std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw FormatError("IDX label file truncated in header");
  const auto magic = read_be32(bytes, 0);
  if (magic != kIdxLabelMagic) {
    throw FormatError("IDX label magic mismatch: expected " + hex32(kIdxLabelMagic) + ", got " +
                      hex32(magic));
  }
  const auto count = read_be32(bytes, 4);
  if (bytes.size() - 8 < count) {
    throw FormatError("IDX label file truncated: expected " + std::to_string(count) +
                      " labels, found " + std::to_string(bytes.size() - 8));
  }
  return {bytes.begin() + 8, bytes.begin() + 8 + count};
}

std::vector<std::uint8_t> serialize_idx_images(const IdxImages& images) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + images.pixels.size());
  write_be32(out, kIdxImageMagic);
  write_be32(out, images.count);
  write_be32(out, images.rows);
  write_be32(out, images.cols);
  out.insert(out.end(), images.pixels.begin(), images.pixels.end());
  return out;
}

std::vector<std::uint8_t> serialize_idx_labels(std::span<const std::uint8_t> labels) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + labels.size());
  write_be32(out, kIdxLabelMagic);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

IdxImages to_idx_images(const Dataset& data, std::uint32_t rows, std::uint32_t cols) {
  if (std::int64_t{rows} * cols != data.dim()) {
    throw StructuralError("to_idx_images: rows*cols != feature dimension");
  }
  IdxImages img;
  img.count = static_cast<std::uint32_t>(data.size());
  img.rows = rows;
  img.cols = cols;
  img.pixels.resize(static_cast<std::size_t>(data.features.size()));
  const float* src = data.features.data();
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(src[i] * 255.0f));
  }
  return img;
}

Dataset load_mnist_idx(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path) {
  const auto img = parse_idx_images(read_file_bytes(images_path));
  const auto lab = parse_idx_labels(read_file_bytes(labels_path));
  if (img.count != lab.size()) {
    throw ValidationError("image count " + std::to_string(img.count) + " != label count " +
                          std::to_string(lab.size()));
  }
  if (img.count == 0) throw ValidationError("IDX files contain no examples");
  Dataset out;
  const Eigen::Index d = Eigen::Index{img.rows} * img.cols;
  out.features.resize(img.count, d);
  float* dst = out.features.data();
  for (std::size_t i = 0; i < img.pixels.size(); ++i) dst[i] = img.pixels[i] / 255.0f;
  out.labels.assign(lab.begin(), lab.end());
  return out;
}

Dataset load_mnist_train(const std::filesystem::path& dir) {
  return load_mnist_idx(find_variant(dir, "train-images-idx3-ubyte"),
                        find_variant(dir, "train-labels-idx1-ubyte"));
}

Dataset load_mnist_test(const std::filesystem::path& dir) {
  return load_mnist_idx(find_variant(dir, "t10k-images-idx3-ubyte"),
                        find_variant(dir, "t10k-labels-idx1-ubyte"));
}

std::vector<ClientDataset> partition_iid(const Dataset& data, const PartitionConfig& cfg) {
  if (cfg.num_clients < 1) throw ValidationError("partition: num_clients must be >= 1");
  if (cfg.num_classes < 2) throw ValidationError("partition: num_classes must be >= 2");
  if (cfg.digits_per_client < 1 || cfg.digits_per_client > cfg.num_classes) {
    throw ValidationError("partition: digits_per_client must be in [1, num_classes]");
  }
  data.validate(cfg.num_classes);

  const auto K = static_cast<std::size_t>(cfg.num_clients);
  const auto C = static_cast<std::size_t>(cfg.num_classes);

  // A uniformly random k-subset is the prefix of a uniformly shuffled class list.
  auto pick_rng = make_stream(cfg.seed, {kPartitionStream, 0});
  std::vector<ClientDataset> clients(K);
  std::vector<std::vector<std::size_t>> holders(C);
  std::vector<int> classes(C);
  for (std::size_t k = 0; k < K; ++k) {
    std::iota(classes.begin(), classes.end(), 0);
    std::shuffle(classes.begin(), classes.end(), pick_rng);
    std::vector<int> digits(classes.begin(), classes.begin() + cfg.digits_per_client);
    std::sort(digits.begin(), digits.end());
    for (int c : digits) holders[static_cast<std::size_t>(c)].push_back(k);
    clients[k].client_id = static_cast<int>(k);
    clients[k].digits = std::move(digits);
  }

  std::vector<std::vector<Eigen::Index>> by_class(C);
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    by_class[static_cast<std::size_t>(data.labels[static_cast<std::size_t>(i)])].push_back(i);
  }

  std::vector<std::vector<Eigen::Index>> assigned(K);
  for (std::size_t c = 0; c < C; ++c) {
    const auto& h = holders[c];
    if (h.empty()) continue;
    auto& pool = by_class[c];
    if (pool.size() < h.size()) {
      throw ValidationError("partition: class " + std::to_string(c) + " has " +
                            std::to_string(pool.size()) + " examples for " +
                            std::to_string(h.size()) + " clients; some client would get none");
    }
    auto rng = make_stream(cfg.seed, {kPartitionStream, 1, c});
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t j = 0; j < pool.size(); ++j) assigned[h[j % h.size()]].push_back(pool[j]);
  }

  for (std::size_t k = 0; k < K; ++k) {
    std::sort(assigned[k].begin(), assigned[k].end());
    clients[k].data = data.select(assigned[k]);
  }
  return clients;
}

Dataset synthetic_dataset(int num_classes, int dim, int per_class_count, double separation,
                          std::uint64_t seed) {
  if (num_classes < 1 || dim < 1 || per_class_count < 1) {
    throw ValidationError("synthetic_dataset: counts must be positive");
  }
  if (!(separation > 0.0)) throw ValidationError("synthetic_dataset: separation must be > 0");

  auto rng = make_stream(seed, {kSyntheticStream});
  std::normal_distribution<double> normal(0.0, 1.0);

  Eigen::MatrixXd centers(num_classes, dim);
  for (int c = 0; c < num_classes; ++c) {
    Eigen::RowVectorXd dir(dim);
    do {
      for (int j = 0; j < dim; ++j) dir[j] = normal(rng);
    } while (dir.norm() == 0.0);
    centers.row(c) = dir.normalized() * separation;
  }

  const Eigen::Index n = Eigen::Index{num_classes} * per_class_count;
  Eigen::MatrixXd raw(n, dim);
  std::vector<int> labels;
  labels.reserve(static_cast<std::size_t>(n));
  for (int c = 0; c < num_classes; ++c) {
    for (int i = 0; i < per_class_count; ++i) {
      const Eigen::Index row = Eigen::Index{c} * per_class_count + i;
      for (int j = 0; j < dim; ++j) raw(row, j) = centers(c, j) + normal(rng);
      labels.push_back(c);
    }
  }

  const double lo = raw.minCoeff();
  const double hi = raw.maxCoeff();
  const double span = hi > lo ? hi - lo : 1.0;
  Dataset out;
  out.features = ((raw.array() - lo) / span).cast<float>().matrix();
  out.features = out.features.cwiseMax(0.0f).cwiseMin(1.0f);
  out.labels = std::move(labels);
  return out;
}

}  // namespace fedsim
