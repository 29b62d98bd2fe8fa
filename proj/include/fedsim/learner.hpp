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
#include <string_view>
#include <vector>

#include "fedsim/aggregation.hpp"
#include "fedsim/datasets.hpp"
#include "fedsim/param_tensor.hpp"

namespace fedsim {

enum class ArchKind { logreg, mlp };

std::string_view to_string(ArchKind kind);
ArchKind parse_arch_kind(std::string_view name);

/// logreg: input -> classes. mlp: input -> hidden (ReLU) -> classes.
struct ModelArch {
  ArchKind kind = ArchKind::mlp;
  int input_dim = 784;
  int hidden_dim = 64;  // mlp only
  int num_classes = 10;

  void validate() const;
  /// Layer layout used for flattening, in forward order (weight then bias).
  ShapeSpec shape() const;
};

struct TrainConfig {
  double learning_rate = 0.01;
  int local_epochs = 2;
  int batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Model {
  ModelArch arch;
  LayeredWeights weights;

  ParamVector flat() const { return flatten(weights, arch.shape()); }
  static Model from_flat(const ModelArch& arch, const ParamVector& params);
};

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

/// Glorot-uniform weights in (-s, s), s = sqrt(6 / (fan_in + fan_out)); zero biases.
Model init_model(const ModelArch& arch, std::uint64_t seed);

/// Class scores (logits), one row per example.
Eigen::MatrixXd class_scores(const Model& model, const Eigen::Ref<const Eigen::MatrixXd>& x);

/// Row-wise softmax of class_scores.
Eigen::MatrixXd predict_proba(const Model& model, const Eigen::Ref<const Eigen::MatrixXd>& x);

/// Mean softmax cross-entropy over the batch; fills `grad` (same layout as
/// model.weights) with its gradient.
double loss_and_gradient(const Model& model, const Eigen::Ref<const Eigen::MatrixXd>& x,
                         std::span<const int> labels, LayeredWeights& grad);

/// Mini-batch SGD on a copy of `model`. Batches follow a per-epoch shuffle
/// keyed by (cfg.seed, epoch).
ModelUpdate train_local(const Model& model, const ClientDataset& data, const TrainConfig& cfg);

/// Index of the largest score; ties go to the smallest index.
int argmax_row(const Eigen::Ref<const Eigen::RowVectorXd>& scores);

int predict(const Model& model, const Eigen::Ref<const Eigen::VectorXd>& example);
std::vector<int> predict_all(const Model& model, const Dataset& data);

EvalResult evaluate(const Model& model, const Dataset& data);

}  // namespace fedsim
