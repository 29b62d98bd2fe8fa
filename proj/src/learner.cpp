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

#include "fedsim/learner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fedsim/random.hpp"

namespace fedsim {

namespace {

constexpr Eigen::Index kEvalChunk = 1024;

bool is_mlp(const Model& m) { return m.arch.kind == ArchKind::mlp; }

/// Dense layer: x * W^T + b.
Eigen::MatrixXd affine(const Eigen::Ref<const Eigen::MatrixXd>& x, const Layer& w, const Layer& b) {
  Eigen::MatrixXd out = x * w.transpose();
  out.rowwise() += b.col(0).transpose();
  return out;
}

/// Per-row log-sum-exp, shifted by the row max.
Eigen::VectorXd row_logsumexp(const Eigen::MatrixXd& logits) {
  const Eigen::VectorXd mx = logits.rowwise().maxCoeff();
  return mx.array() + (logits.colwise() - mx).array().exp().rowwise().sum().log();
}

void check_input(const Model& model, Eigen::Index cols) {
  if (cols != model.arch.input_dim) {
    throw StructuralError("feature dimension " + std::to_string(cols) +
                          " does not match model input_dim " +
                          std::to_string(model.arch.input_dim));
  }
}

void check_labels(const Model& model, std::span<const int> labels) {
  for (int l : labels) {
    if (l < 0 || l >= model.arch.num_classes) {
      throw ValidationError("label " + std::to_string(l) + " outside model class range");
    }
  }
}

}  // namespace

std::string_view to_string(ArchKind kind) { return kind == ArchKind::logreg ? "logreg" : "mlp"; }

ArchKind parse_arch_kind(std::string_view name) {
  if (name == "logreg") return ArchKind::logreg;
  if (name == "mlp") return ArchKind::mlp;
  throw ValidationError("unknown architecture '" + std::string(name) + "' (expected logreg, mlp)");
}

void ModelArch::validate() const {
  if (input_dim < 1) throw ValidationError("arch.input_dim must be >= 1");
  if (num_classes < 2) throw ValidationError("arch.num_classes must be >= 2");
  if (kind == ArchKind::mlp && hidden_dim < 1) {
    throw ValidationError("arch.hidden_dim must be >= 1 for mlp");
  }
}

ShapeSpec ModelArch::shape() const {
  validate();
  if (kind == ArchKind::logreg) {
    return ShapeSpec({{"weight", {num_classes, input_dim}}, {"bias", {num_classes}}});
  }
  return ShapeSpec({{"hidden.weight", {hidden_dim, input_dim}},
                    {"hidden.bias", {hidden_dim}},
                    {"output.weight", {num_classes, hidden_dim}},
                    {"output.bias", {num_classes}}});
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("train.learning_rate must be a finite non-negative number");
  }
  if (local_epochs < 1) throw ValidationError("train.local_epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
}

Model Model::from_flat(const ModelArch& arch, const ParamVector& params) {
  return Model{arch, unflatten(params, arch.shape())};
}

Model init_model(const ModelArch& arch, std::uint64_t seed) {
  const auto spec = arch.shape();
  auto rng = make_stream(seed, {kInitStream});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Model m{arch, {}};
  for (const auto& layer : spec.layers()) {
    Layer w = Layer::Zero(layer.rows(), layer.cols());
    if (layer.dims.size() == 2) {
      const double fan_out = static_cast<double>(layer.dims[0]);
      const double fan_in = static_cast<double>(layer.dims[1]);
      const double s = std::sqrt(6.0 / (fan_in + fan_out));
      for (Eigen::Index i = 0; i < w.size(); ++i) {
        double u = 0.0;
        do {
          u = unit(rng);
        } while (u == 0.0);
        w.data()[i] = s * (2.0 * u - 1.0);
      }
    }
    m.weights.push_back(std::move(w));
  }
  return m;
}

Eigen::MatrixXd class_scores(const Model& model, const Eigen::Ref<const Eigen::MatrixXd>& x) {
  check_input(model, x.cols());
  const auto& w = model.weights;
  if (!is_mlp(model)) return affine(x, w[0], w[1]);
  const Eigen::MatrixXd hidden = affine(x, w[0], w[1]).cwiseMax(0.0);
  return affine(hidden, w[2], w[3]);
}

Eigen::MatrixXd predict_proba(const Model& model, const Eigen::Ref<const Eigen::MatrixXd>& x) {
  const Eigen::MatrixXd logits = class_scores(model, x);
  const Eigen::VectorXd lse = row_logsumexp(logits);
  return (logits.colwise() - lse).array().exp().matrix();
}

double loss_and_gradient(const Model& model, const Eigen::Ref<const Eigen::MatrixXd>& x,
                         std::span<const int> labels, LayeredWeights& grad) {
  check_input(model, x.cols());
  if (static_cast<std::size_t>(x.rows()) != labels.size() || labels.empty()) {
    throw StructuralError("loss_and_gradient: batch rows and labels differ or are empty");
  }
  check_labels(model, labels);
  const auto& w = model.weights;
  const double batch = static_cast<double>(x.rows());

  Eigen::MatrixXd pre_hidden;
  Eigen::MatrixXd hidden;
  if (is_mlp(model)) {
    pre_hidden = affine(x, w[0], w[1]);
    hidden = pre_hidden.cwiseMax(0.0);
  }
  using ConstRef = Eigen::Ref<const Eigen::MatrixXd>;
  const ConstRef last_in = is_mlp(model) ? ConstRef(hidden) : x;
  const std::size_t out_w = is_mlp(model) ? 2 : 0;

  const Eigen::MatrixXd logits = affine(last_in, w[out_w], w[out_w + 1]);
  const Eigen::VectorXd lse = row_logsumexp(logits);
  Eigen::MatrixXd delta = (logits.colwise() - lse).array().exp().matrix();  // softmax
  double loss = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    loss += lse[i] - logits(i, y);
    delta(i, y) -= 1.0;
  }
  delta /= batch;

  grad.resize(w.size());
  grad[out_w] = delta.transpose() * last_in;
  grad[out_w + 1] = delta.colwise().sum().transpose();
  if (is_mlp(model)) {
    Eigen::MatrixXd back = delta * w[2];
    back = (pre_hidden.array() > 0.0).select(back, 0.0);
    grad[0] = back.transpose() * x;
    grad[1] = back.colwise().sum().transpose();
  }
  return loss / batch;
}

ModelUpdate train_local(const Model& model, const ClientDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  const auto n = data.data.size();
  if (n == 0) {
    throw ValidationError("train_local: client " + std::to_string(data.client_id) +
                          " has an empty dataset");
  }
  check_input(model, data.data.dim());
  require_finite(model.flat(), "train_local: initial model");

  Model local = model;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  LayeredWeights grad;
  Eigen::MatrixXd batch_x;
  std::vector<int> batch_y;
  const auto bs = static_cast<Eigen::Index>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    auto rng = make_stream(cfg.seed, {kShuffleStream, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), rng);

    for (Eigen::Index start = 0; start < n; start += bs) {
      const Eigen::Index len = std::min(bs, n - start);
      batch_x.resize(len, data.data.dim());
      batch_y.resize(static_cast<std::size_t>(len));
      for (Eigen::Index r = 0; r < len; ++r) {
        const auto src = order[static_cast<std::size_t>(start + r)];
        batch_x.row(r) = data.data.features.row(src).cast<double>();
        batch_y[static_cast<std::size_t>(r)] = data.data.labels[static_cast<std::size_t>(src)];
      }
      const double loss = loss_and_gradient(local, batch_x, batch_y, grad);
      if (!std::isfinite(loss)) {
        throw TrainingError("train_local: client " + std::to_string(data.client_id) +
                            " diverged (non-finite loss) in epoch " + std::to_string(epoch));
      }
      for (std::size_t l = 0; l < local.weights.size(); ++l) {
        local.weights[l] -= cfg.learning_rate * grad[l];
      }
    }
  }

  ModelUpdate update{data.client_id, local.flat(), static_cast<std::int64_t>(n)};
  if (!update.params.allFinite()) {
    throw TrainingError("train_local: client " + std::to_string(data.client_id) +
                        " produced non-finite parameters in epoch " +
                        std::to_string(cfg.local_epochs - 1));
  }
  return update;
}

int argmax_row(const Eigen::Ref<const Eigen::RowVectorXd>& scores) {
  int best = 0;
  for (Eigen::Index c = 1; c < scores.size(); ++c) {
    if (scores[c] > scores[best]) best = static_cast<int>(c);
  }
  return best;
}

int predict(const Model& model, const Eigen::Ref<const Eigen::VectorXd>& example) {
  const Eigen::MatrixXd scores = class_scores(model, example.transpose());
  return argmax_row(scores.row(0));
}

std::vector<int> predict_all(const Model& model, const Dataset& data) {
  check_input(model, data.dim());
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(data.size()));
  for (Eigen::Index start = 0; start < data.size(); start += kEvalChunk) {
    const Eigen::Index len = std::min(kEvalChunk, data.size() - start);
    const Eigen::MatrixXd x = data.features.middleRows(start, len).cast<double>();
    const Eigen::MatrixXd scores = class_scores(model, x);
    for (Eigen::Index i = 0; i < len; ++i) out.push_back(argmax_row(scores.row(i)));
  }
  return out;
}

EvalResult evaluate(const Model& model, const Dataset& data) {
  if (data.size() == 0) throw ValidationError("evaluate: empty dataset");
  check_input(model, data.dim());
  check_labels(model, data.labels);
  double loss = 0.0;
  std::int64_t correct = 0;
  for (Eigen::Index start = 0; start < data.size(); start += kEvalChunk) {
    const Eigen::Index len = std::min(kEvalChunk, data.size() - start);
    const Eigen::MatrixXd x = data.features.middleRows(start, len).cast<double>();
    const Eigen::MatrixXd scores = class_scores(model, x);
    const Eigen::VectorXd lse = row_logsumexp(scores);
    for (Eigen::Index i = 0; i < len; ++i) {
      const int y = data.labels[static_cast<std::size_t>(start + i)];
      loss += lse[i] - scores(i, y);
      if (argmax_row(scores.row(i)) == y) ++correct;
    }
  }
  const double n = static_cast<double>(data.size());
  return {static_cast<double>(correct) / n, loss / n};
}

}  // namespace fedsim
