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

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fedsim/errors.hpp"

namespace fedsim {

/// Pixel intensities in [0, 1], one example per row.
using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Dataset {
  FeatureMatrix features;
  std::vector<int> labels;

  Eigen::Index size() const noexcept { return features.rows(); }
  Eigen::Index dim() const noexcept { return features.cols(); }

  /// Checks N >= 1, features finite in [0, 1], labels in [0, num_classes).
  void validate(int num_classes) const;

  /// Rows in the given order.
  Dataset select(std::span<const Eigen::Index> rows) const;
  /// First min(n, size()) rows.
  Dataset head(Eigen::Index n) const;
};

struct ClientDataset {
  int client_id = 0;
  Dataset data;
  std::vector<int> digits;  // sorted, distinct
  bool is_attacker = false;
};

struct PartitionConfig {
  int num_clients = 100;
  std::uint64_t seed = 0;
  int digits_per_client = 2;
  int num_classes = 10;
};

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

struct IdxImages {
  std::uint32_t count = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> pixels;
};

/// Reads a whole file, transparently inflating gzip input (0x1F 0x8B prefix).
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> serialize_idx_images(const IdxImages& images);
std::vector<std::uint8_t> serialize_idx_labels(std::span<const std::uint8_t> labels);

/// Inverse of the [0,1] scaling used by load_mnist_idx.
IdxImages to_idx_images(const Dataset& data, std::uint32_t rows, std::uint32_t cols);

Dataset load_mnist_idx(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path);

/// Standard MNIST file names under `dir` (plain or .gz).
Dataset load_mnist_train(const std::filesystem::path& dir);
Dataset load_mnist_test(const std::filesystem::path& dir);

/// Assigns every client a seed-determined set of distinct classes, then
/// deals each class's examples round-robin (over a seeded shuffle) to the
/// clients holding that class. Examples of a class nobody holds are unused.
std::vector<ClientDataset> partition_iid(const Dataset& data, const PartitionConfig& cfg);

/// Gaussian blobs around seeded directions scaled by `separation`, unit
/// isotropic noise, then affinely squashed into [0, 1]. Rows are class-major.
Dataset synthetic_dataset(int num_classes, int dim, int per_class_count, double separation,
                          std::uint64_t seed);

}  // namespace fedsim
