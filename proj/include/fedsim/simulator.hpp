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

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fedsim/adversary.hpp"
#include "fedsim/aggregation.hpp"
#include "fedsim/datasets.hpp"
#include "fedsim/learner.hpp"

namespace fedsim {

/// Where the experiment's training and test data come from.
struct DataConfig {
  std::string mnist_dir;  // used unless `synthetic`
  bool synthetic = false;
  std::int64_t train_limit = 0;  // 0 = all
  std::int64_t test_limit = 0;
  // synthetic corpus
  int synthetic_dim = 784;
  int synthetic_train_per_class = 200;
  int synthetic_test_per_class = 50;
  double synthetic_separation = 3.0;
};

struct SimConfig {
  int num_clients = 100;
  int clients_per_round = 10;
  int rounds = 100;
  ModelArch arch;
  TrainConfig train;
  StrategyConfig strategy;
  AttackConfig attack;
  DataConfig data;
  std::uint64_t seed = 0;
  int eval_every = 1;
  int threads = 1;
  /// When false, aggregation time is reported as 0 so that reports are
  /// byte-reproducible.
  bool record_timing = true;
  /// Recompute fedavg by brute force every round and fail on disagreement.
  bool verify_aggregation = false;

  void validate() const;
};

struct RoundReport {
  int round = 0;
  std::vector<int> participant_ids;
  int attackers_in_round = 0;
  bool evaluated = true;
  double accuracy = 0.0;
  double mean_loss = 0.0;
  double attack_success_rate = 0.0;
  double aggregation_time = 0.0;
  std::vector<ClientWeight> per_client_weights;
};

struct ExperimentSummary {
  double final_accuracy = 0.0;
  double final_loss = 0.0;
  double mean_asr = 0.0;
  double mean_aggregation_time = 0.0;
};

struct ExperimentReport {
  SimConfig config;
  std::vector<RoundReport> rounds;
  ExperimentSummary summary;
};

/// Everything a round reads besides the config.
struct SimState {
  Model global;
  std::vector<ClientDataset> clients;
  Dataset test;
};

/// What the aggregator saw in one round, for instrumentation.
struct RoundTrace {
  int round = 0;
  const ParamVector* anchor = nullptr;
  std::span<const ModelUpdate> updates;
  const AggregationResult* result = nullptr;
  const std::vector<ClientDataset>* clients = nullptr;
};

using RoundObserver = std::function<void(const RoundTrace&)>;

struct RoundOutcome {
  Model global;
  RoundReport report;
};

/// Uniform sample of m distinct ids from [0, K), sorted, keyed by (seed, round).
/// m == K returns every id.
std::vector<int> sample_clients(int num_clients, int per_round, std::uint64_t seed, int round);

/// Fraction of test examples labelled `source` that the model predicts as `target`.
double attack_success_rate(const Model& model, const Dataset& test, int source, int target);

/// One round: sample, train from the current global model, aggregate with the
/// current global model as anchor, evaluate on the held-out set. Rounds that
/// are not due for evaluation (see eval_every) copy metrics from `previous`.
RoundOutcome run_round(const SimState& state, const SimConfig& cfg, int round,
                       const RoundObserver& observer = {}, const RoundReport* previous = nullptr);

/// Partitions `train`, injects the attack and initializes the global model.
SimState prepare_state(const SimConfig& cfg, const Dataset& train, Dataset test);

/// Training and test sets as configured by cfg.data.
std::pair<Dataset, Dataset> load_data(const SimConfig& cfg);

ExperimentReport run_experiment(const SimConfig& cfg, const RoundObserver& observer = {});
ExperimentReport run_experiment(const SimConfig& cfg, const Dataset& train, const Dataset& test,
                                const RoundObserver& observer = {});

}  // namespace fedsim
