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

#include "fedsim/simulator.hpp"

#include <gtest/gtest.h>

#include <set>

namespace fedsim {
namespace {

SimConfig small_config(StrategyKind kind = StrategyKind::euclidean) {
  SimConfig cfg;
  cfg.num_clients = 10;
  cfg.clients_per_round = 5;
  cfg.rounds = 3;
  cfg.arch.kind = ArchKind::logreg;
  cfg.arch.input_dim = 20;
  cfg.train.learning_rate = 0.1;
  cfg.train.local_epochs = 1;
  cfg.strategy.kind = kind;
  cfg.data.synthetic = true;
  cfg.data.synthetic_dim = 20;
  cfg.data.synthetic_train_per_class = 40;
  cfg.data.synthetic_test_per_class = 20;
  cfg.data.synthetic_separation = 4.0;
  cfg.seed = 5;
  cfg.record_timing = false;
  return cfg;
}

void expect_same_reports(const ExperimentReport& a, const ExperimentReport& b) {
  ASSERT_EQ(a.rounds.size(), b.rounds.size());
  for (std::size_t r = 0; r < a.rounds.size(); ++r) {
    EXPECT_EQ(a.rounds[r].participant_ids, b.rounds[r].participant_ids);
    EXPECT_EQ(a.rounds[r].accuracy, b.rounds[r].accuracy);
    EXPECT_EQ(a.rounds[r].mean_loss, b.rounds[r].mean_loss);
    EXPECT_EQ(a.rounds[r].attack_success_rate, b.rounds[r].attack_success_rate);
    ASSERT_EQ(a.rounds[r].per_client_weights.size(), b.rounds[r].per_client_weights.size());
    for (std::size_t k = 0; k < a.rounds[r].per_client_weights.size(); ++k) {
      EXPECT_EQ(a.rounds[r].per_client_weights[k].weight, b.rounds[r].per_client_weights[k].weight);
    }
  }
}

TEST(SampleClients, DistinctSortedAndDeterministic) {
  for (int round = 0; round < 20; ++round) {
    const auto ids = sample_clients(100, 10, 7, round);
    ASSERT_EQ(ids.size(), 10u);
    EXPECT_TRUE(std::is_sorted(ids.begin(), ids.end()));
    EXPECT_EQ(std::set<int>(ids.begin(), ids.end()).size(), 10u);
    EXPECT_GE(ids.front(), 0);
    EXPECT_LT(ids.back(), 100);
    EXPECT_EQ(ids, sample_clients(100, 10, 7, round));
  }
  EXPECT_NE(sample_clients(100, 10, 7, 0), sample_clients(100, 10, 7, 1));
  EXPECT_EQ(sample_clients(4, 4, 1, 0), (std::vector<int>{0, 1, 2, 3}));
  EXPECT_THROW(sample_clients(4, 5, 1, 0), ValidationError);
}

TEST(SampleClients, RoughlyUniform) {
  std::vector<int> hits(20, 0);
  for (int round = 0; round < 4000; ++round) {
    for (int id : sample_clients(20, 5, 3, round)) ++hits[static_cast<std::size_t>(id)];
  }
  // Expected 1000 per client, sd ~27.
  for (int h : hits) EXPECT_NEAR(h, 1000, 150);
}

TEST(AttackSuccessRate, Examples) {
  ModelArch arch;
  arch.kind = ArchKind::logreg;
  arch.input_dim = 1;
  Model m = init_model(arch, 0);
  for (auto& l : m.weights) l.setZero();
  m.weights[1](7, 0) = 1.0;  // always predicts 7
  Dataset test;
  test.features = FeatureMatrix::Zero(4, 1);
  test.labels = {1, 1, 2, 3};
  EXPECT_EQ(attack_success_rate(m, test, 1, 7), 1.0);
  m.weights[1](7, 0) = 0.0;
  m.weights[1](1, 0) = 1.0;  // always predicts 1
  EXPECT_EQ(attack_success_rate(m, test, 1, 7), 0.0);
  test.labels = {2, 2, 2, 2};
  EXPECT_THROW(attack_success_rate(m, test, 1, 7), ValidationError);
}

TEST(Simulator, ReportShapeAndDeterminism) {
  const SimConfig cfg = small_config();
  const auto a = run_experiment(cfg);
  const auto b = run_experiment(cfg);
  ASSERT_EQ(a.rounds.size(), 3u);
  for (int r = 0; r < 3; ++r) {
    EXPECT_EQ(a.rounds[r].round, r);
    EXPECT_EQ(a.rounds[r].participant_ids.size(), 5u);
    EXPECT_GE(a.rounds[r].accuracy, 0.0);
    EXPECT_LE(a.rounds[r].accuracy, 1.0);
    EXPECT_EQ(a.rounds[r].aggregation_time, 0.0);
  }
  expect_same_reports(a, b);
  EXPECT_EQ(a.summary.final_accuracy, a.rounds.back().accuracy);
}

TEST(Simulator, ParallelTrainingMatchesSerial) {
  SimConfig cfg = small_config(StrategyKind::residual_reweight);
  cfg.attack.num_attackers = 2;
  const auto serial = run_experiment(cfg);
  cfg.threads = 4;
  expect_same_reports(serial, run_experiment(cfg));
}

TEST(Simulator, ZeroLearningRateIsFixpoint) {
  for (auto kind : {StrategyKind::fedavg, StrategyKind::euclidean, StrategyKind::median,
                    StrategyKind::trimmed_mean, StrategyKind::residual_reweight}) {
    SimConfig cfg = small_config(kind);
    cfg.train.learning_rate = 0.0;
    auto [train, test] = load_data(cfg);
    const SimState state = prepare_state(cfg, train, test);
    const auto out = run_round(state, cfg, 0);
    EXPECT_LE((out.global.flat() - state.global.flat()).cwiseAbs().maxCoeff(), 1e-12)
        << to_string(kind);
  }
}

TEST(Simulator, AnchorIsPreviousGlobalModel) {
  const SimConfig cfg = small_config();
  std::vector<ParamVector> anchors;
  std::vector<ParamVector> outputs;
  run_experiment(cfg, [&](const RoundTrace& t) {
    anchors.push_back(*t.anchor);
    outputs.push_back(t.result->global_params);
    // Distances reported are measured from the anchor.
    for (std::size_t k = 0; k < t.updates.size(); ++k) {
      const auto& u = t.updates[k];
      for (const auto& w : t.result->per_client) {
        if (w.client_id == u.client_id) {
          EXPECT_NEAR(w.distance, std::max((u.params - *t.anchor).norm(), 1e-12), 1e-12);
        }
      }
    }
  });
  ASSERT_EQ(anchors.size(), 3u);
  auto [train, test] = load_data(cfg);
  EXPECT_EQ(anchors[0], prepare_state(cfg, train, test).global.flat());
  EXPECT_EQ(anchors[1], outputs[0]);
  EXPECT_EQ(anchors[2], outputs[1]);
}

TEST(Simulator, SingleClientRoundsAgreeAcrossStrategies) {
  SimConfig cfg = small_config(StrategyKind::fedavg);
  cfg.clients_per_round = 1;
  const auto fa = run_experiment(cfg);
  cfg.strategy.kind = StrategyKind::euclidean;
  const auto eu = run_experiment(cfg);
  ASSERT_EQ(fa.rounds.size(), eu.rounds.size());
  for (std::size_t r = 0; r < fa.rounds.size(); ++r) {
    EXPECT_NEAR(fa.rounds[r].accuracy, eu.rounds[r].accuracy, 1e-12);
    EXPECT_NEAR(fa.rounds[r].mean_loss, eu.rounds[r].mean_loss, 1e-9);
  }
}

TEST(Simulator, AttackersFixedAndCounted) {
  SimConfig cfg = small_config();
  cfg.attack.num_attackers = 2;
  cfg.clients_per_round = 10;
  std::set<int> attackers;
  const auto report = run_experiment(cfg, [&](const RoundTrace& t) {
    std::set<int> now;
    for (const auto& c : *t.clients) {
      if (c.is_attacker) now.insert(c.client_id);
    }
    if (attackers.empty()) attackers = now;
    EXPECT_EQ(now, attackers);
  });
  EXPECT_EQ(attackers.size(), 2u);
  for (const auto& r : report.rounds) EXPECT_EQ(r.attackers_in_round, 2);
}

TEST(Simulator, EuclideanDownweightsPoisonedUpdates) {
  // All clients participate; attackers train longer on flipped labels, so
  // they land farther from the anchor and receive less weight.
  SimConfig cfg = small_config();
  cfg.num_clients = 20;
  cfg.clients_per_round = 20;
  cfg.attack.num_attackers = 3;
  cfg.attack.extra_epochs = 8;
  double attacker_weight = 0.0;
  double honest_weight = 0.0;
  int rounds = 0;
  run_experiment(cfg, [&](const RoundTrace& t) {
    ++rounds;
    for (const auto& w : t.result->per_client) {
      const bool bad = (*t.clients)[static_cast<std::size_t>(w.client_id)].is_attacker;
      (bad ? attacker_weight : honest_weight) += w.weight;
    }
  });
  EXPECT_LT(attacker_weight / 3.0, honest_weight / 17.0);
}

TEST(Simulator, NoAttackParityOnSyntheticData) {
  SimConfig cfg;
  cfg.rounds = 10;
  cfg.data.synthetic = true;
  cfg.strategy.kind = StrategyKind::fedavg;
  cfg.seed = 1;
  cfg.record_timing = false;
  const auto fa = run_experiment(cfg);
  cfg.strategy.kind = StrategyKind::euclidean;
  const auto eu = run_experiment(cfg);
  EXPECT_NEAR(fa.summary.final_accuracy, eu.summary.final_accuracy, 0.02);
}

TEST(Simulator, EvalEveryCarriesMetricsForward) {
  SimConfig cfg = small_config();
  cfg.rounds = 5;
  cfg.eval_every = 2;
  const auto rep = run_experiment(cfg);
  EXPECT_TRUE(rep.rounds[0].evaluated);
  EXPECT_TRUE(rep.rounds[1].evaluated);
  EXPECT_FALSE(rep.rounds[2].evaluated);
  EXPECT_EQ(rep.rounds[2].accuracy, rep.rounds[1].accuracy);
  EXPECT_TRUE(rep.rounds[4].evaluated);
}

TEST(Simulator, VerifyModePasses) {
  SimConfig cfg = small_config(StrategyKind::fedavg);
  cfg.verify_aggregation = true;
  EXPECT_NO_THROW(run_experiment(cfg));
}

TEST(Simulator, ErrorsNameTheStage) {
  SimConfig cfg = small_config();
  cfg.train.learning_rate = 1e300;
  try {
    run_experiment(cfg);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage().rfind("round 0/", 0), 0u) << e.stage();
  }
  cfg = small_config();
  cfg.clients_per_round = 11;
  EXPECT_THROW(run_experiment(cfg), StageError);
  cfg = small_config();
  cfg.data.synthetic = false;
  EXPECT_THROW(run_experiment(cfg), StageError);
}

}  // namespace
}  // namespace fedsim
