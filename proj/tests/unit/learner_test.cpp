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

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fedsim/random.hpp"
#include "test_util.hpp"

namespace fedsim {
namespace {

ModelArch small_arch(ArchKind kind, int d = 5, int h = 4, int c = 3) {
  ModelArch a;
  a.kind = kind;
  a.input_dim = d;
  a.hidden_dim = h;
  a.num_classes = c;
  return a;
}

/// Loss computed from scratch, one example at a time.
double oracle_loss(const Model& m, const Eigen::MatrixXd& x, const std::vector<int>& y) {
  const auto& w = m.weights;
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::VectorXd in = x.row(i).transpose();
    if (m.arch.kind == ArchKind::mlp) {
      Eigen::VectorXd h(w[0].rows());
      for (Eigen::Index j = 0; j < h.size(); ++j) {
        double s = w[1](j, 0);
        for (Eigen::Index k = 0; k < in.size(); ++k) s += w[0](j, k) * in[k];
        h[j] = s > 0 ? s : 0.0;
      }
      in = h;
    }
    const std::size_t o = m.arch.kind == ArchKind::mlp ? 2 : 0;
    std::vector<double> z(static_cast<std::size_t>(w[o].rows()));
    for (std::size_t c = 0; c < z.size(); ++c) {
      double s = w[o + 1](static_cast<Eigen::Index>(c), 0);
      for (Eigen::Index k = 0; k < in.size(); ++k) s += w[o](static_cast<Eigen::Index>(c), k) * in[k];
      z[c] = s;
    }
    double denom = 0.0;
    for (double v : z) denom += std::exp(v);
    total += std::log(denom) - z[static_cast<std::size_t>(y[static_cast<std::size_t>(i)])];
  }
  return total / static_cast<double>(x.rows());
}

Dataset separable_set(int per_class) {
  // Class 0 lights feature 0, class 1 lights feature 1.
  Dataset d;
  d.features = FeatureMatrix::Zero(2 * per_class, 4);
  for (int i = 0; i < 2 * per_class; ++i) {
    const int c = i % 2;
    d.features(i, c) = 1.0f;
    d.features(i, 2 + c) = 0.5f;
    d.labels.push_back(c);
  }
  return d;
}

TEST(Learner, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (auto kind : {ArchKind::logreg, ArchKind::mlp}) {
    const ModelArch arch = small_arch(kind);
    Model m = init_model(arch, 9);
    // Shift biases away from zero so ReLU kinks are not hit.
    for (auto& l : m.weights) l.array() += 0.05;
    Eigen::MatrixXd x(6, arch.input_dim);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = std::normal_distribution<double>()(rng);
    const std::vector<int> y = {0, 1, 2, 2, 1, 0};

    LayeredWeights grad;
    const double loss = loss_and_gradient(m, x, y, grad);
    EXPECT_NEAR(loss, oracle_loss(m, x, y), 1e-12);

    const double h = 1e-5;
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
      for (Eigen::Index i = 0; i < m.weights[l].size(); ++i) {
        Model plus = m, minus = m;
        plus.weights[l].data()[i] += h;
        minus.weights[l].data()[i] -= h;
        const double fd = (oracle_loss(plus, x, y) - oracle_loss(minus, x, y)) / (2 * h);
        const double g = grad[l].data()[i];
        EXPECT_NEAR(g, fd, 1e-6 * std::max(1.0, std::abs(fd))) << to_string(kind) << " layer " << l;
      }
    }
  }
}

TEST(Learner, ZeroModelLossIsLogClasses) {
  ModelArch arch = small_arch(ArchKind::logreg, 8, 4, 10);
  Model m = init_model(arch, 1);
  for (auto& l : m.weights) l.setZero();
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 8);
  LayeredWeights grad;
  EXPECT_NEAR(loss_and_gradient(m, x, std::vector<int>{0, 3, 9, 2, 2}, grad), std::log(10.0), 1e-12);
}

TEST(Learner, LossIsStableForHugeLogits) {
  ModelArch arch = small_arch(ArchKind::logreg, 1, 4, 2);
  Model m = init_model(arch, 1);
  m.weights[0] << 1000.0, -1000.0;
  m.weights[1].setZero();
  Eigen::MatrixXd x(1, 1);
  x << 1.0;
  LayeredWeights grad;
  EXPECT_NEAR(loss_and_gradient(m, x, std::vector<int>{1}, grad), 2000.0, 1e-9);
  EXPECT_TRUE(grad[0].allFinite());
}

TEST(Learner, SoftmaxRowsSumToOne) {
  const ModelArch arch = small_arch(ArchKind::mlp, 7, 5, 4);
  const Model m = init_model(arch, 2);
  const Eigen::MatrixXd p = predict_proba(m, Eigen::MatrixXd::Random(20, 7) * 50.0);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
    EXPECT_GE(p.row(i).minCoeff(), 0.0);
  }
}

TEST(Learner, InitBoundsAndZeroBiases) {
  for (auto kind : {ArchKind::logreg, ArchKind::mlp}) {
    ModelArch arch;
    arch.kind = kind;
    const Model m = init_model(arch, 77);
    const auto spec = arch.shape();
    for (std::size_t l = 0; l < spec.layers().size(); ++l) {
      const auto& shape = spec.layers()[l];
      if (shape.dims.size() == 1) {
        EXPECT_TRUE(m.weights[l].isZero(0.0)) << shape.name;
        continue;
      }
      const double s = std::sqrt(6.0 / (shape.dims[0] + shape.dims[1]));
      EXPECT_LT(m.weights[l].cwiseAbs().maxCoeff(), s) << shape.name;
      // Roughly uniform: mean |w| close to s/2.
      EXPECT_NEAR(m.weights[l].cwiseAbs().mean(), s / 2, 0.05 * s) << shape.name;
    }
    EXPECT_EQ(m.flat(), init_model(arch, 77).flat());
    EXPECT_NE(m.flat(), init_model(arch, 78).flat());
  }
}

TEST(Learner, DefaultParameterCounts) {
  ModelArch arch;
  arch.kind = ArchKind::logreg;
  EXPECT_EQ(arch.shape().total_size(), 7850);
  arch.kind = ArchKind::mlp;
  EXPECT_EQ(arch.shape().total_size(), 784 * 64 + 64 + 64 * 10 + 10);
}

TEST(Learner, ZeroLearningRateIsIdentity) {
  const Dataset d = separable_set(10);
  const Model m = init_model(small_arch(ArchKind::mlp, 4, 3, 2), 4);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  const auto up = train_local(m, {5, d, {0, 1}, false}, cfg);
  EXPECT_EQ(up.params, m.flat());
  EXPECT_EQ(up.client_id, 5);
  EXPECT_EQ(up.sample_count, 20);
}

TEST(Learner, LearnsSeparableToySet) {
  const Dataset d = separable_set(50);
  for (auto kind : {ArchKind::logreg, ArchKind::mlp}) {
    const Model m = init_model(small_arch(kind, 4, 8, 2), 4);
    TrainConfig cfg;
    cfg.learning_rate = 0.5;
    cfg.local_epochs = 20;
    cfg.batch_size = 8;
    const auto up = train_local(m, {0, d, {0, 1}, false}, cfg);
    const Model trained = Model::from_flat(m.arch, up.params);
    EXPECT_EQ(evaluate(trained, d).accuracy, 1.0) << to_string(kind);
  }
}

TEST(Learner, OneEpochLowersLoss) {
  const Dataset d = separable_set(40);
  const Model m = init_model(small_arch(ArchKind::logreg, 4, 1, 2), 8);
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.local_epochs = 1;
  const auto up = train_local(m, {0, d, {0, 1}, false}, cfg);
  EXPECT_LT(evaluate(Model::from_flat(m.arch, up.params), d).mean_loss, evaluate(m, d).mean_loss);
}

TEST(Learner, TrainingIsDeterministicInSeed) {
  const Dataset d = separable_set(30);
  const Model m = init_model(small_arch(ArchKind::mlp, 4, 6, 2), 1);
  TrainConfig cfg;
  cfg.seed = 42;
  cfg.batch_size = 7;
  const ClientDataset c{0, d, {0, 1}, false};
  EXPECT_EQ(train_local(m, c, cfg).params, train_local(m, c, cfg).params);
  TrainConfig other = cfg;
  other.seed = 43;
  EXPECT_NE(train_local(m, c, cfg).params, train_local(m, c, other).params);
}

TEST(Learner, FullBatchStepMatchesGradient) {
  const Dataset d = separable_set(6);
  const Model m = init_model(small_arch(ArchKind::logreg, 4, 1, 2), 3);
  TrainConfig cfg;
  cfg.learning_rate = 0.3;
  cfg.local_epochs = 1;
  cfg.batch_size = 1000;
  const auto up = train_local(m, {0, d, {0, 1}, false}, cfg);
  LayeredWeights grad;
  loss_and_gradient(m, d.features.cast<double>(), d.labels, grad);
  const ParamVector expected = m.flat() - 0.3 * flatten(grad, m.arch.shape());
  EXPECT_LE((up.params - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Learner, PredictTieBreaksToSmallestIndex) {
  Model m = init_model(small_arch(ArchKind::logreg, 3, 1, 4), 0);
  for (auto& l : m.weights) l.setZero();
  EXPECT_EQ(predict(m, Eigen::VectorXd::Ones(3)), 0);
  m.weights[1](3, 0) = 1.0;
  EXPECT_EQ(predict(m, Eigen::VectorXd::Ones(3)), 3);
  m.weights[1](1, 0) = 1.0;
  EXPECT_EQ(predict(m, Eigen::VectorXd::Ones(3)), 1);
}

TEST(Learner, PredictAllMatchesPerExample) {
  const Model m = init_model(small_arch(ArchKind::mlp, 4, 5, 3), 12);
  Dataset d;
  d.features = FeatureMatrix::Random(2100, 4).cwiseAbs();
  d.labels.assign(2100, 0);
  const auto all = predict_all(m, d);
  ASSERT_EQ(all.size(), 2100u);
  for (Eigen::Index i = 0; i < d.size(); i += 97) {
    EXPECT_EQ(all[static_cast<std::size_t>(i)], predict(m, d.features.row(i).cast<double>().transpose()));
  }
}

TEST(Learner, Errors) {
  const Model m = init_model(small_arch(ArchKind::logreg, 4, 1, 2), 0);
  EXPECT_THROW(predict(m, Eigen::VectorXd::Zero(5)), StructuralError);
  TrainConfig cfg;
  cfg.batch_size = 0;
  EXPECT_THROW(train_local(m, {0, separable_set(2), {0, 1}, false}, cfg), ValidationError);
  EXPECT_THROW(train_local(m, {0, Dataset{FeatureMatrix(0, 4), {}}, {}, false}, TrainConfig{}),
               ValidationError);
  EXPECT_THROW(parse_arch_kind("cnn"), ValidationError);

  Model bad = m;
  bad.weights[0](0, 0) = std::nan("");
  EXPECT_THROW(train_local(bad, {0, separable_set(2), {0, 1}, false}, TrainConfig{}),
               ValidationError);
}

TEST(Learner, DivergenceIsTrainingError) {
  const Dataset d = separable_set(10);
  const Model m = init_model(small_arch(ArchKind::mlp, 4, 4, 2), 0);
  TrainConfig cfg;
  cfg.learning_rate = 1e300;
  try {
    train_local(m, {3, d, {0, 1}, false}, cfg);
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("client 3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos) << e.what();
  }
}

TEST(Random, DeriveSeedSeparatesStreams) {
  EXPECT_EQ(derive_seed(1, {2, 3}), derive_seed(1, {2, 3}));
  EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(1, {3, 2}));
  EXPECT_NE(derive_seed(1, {2}), derive_seed(2, {2}));
}

}  // namespace
}  // namespace fedsim
