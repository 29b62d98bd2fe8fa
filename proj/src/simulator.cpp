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

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>
#include <thread>

#include "fedsim/random.hpp"

namespace fedsim {

namespace {

constexpr double kVerifyTolerance = 1e-9;

template <typename Fn>
auto with_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index writes
/// only its own slot, so results do not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const auto workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void verify_fedavg(std::span<const ModelUpdate> updates, const ParamVector& got) {
  double total = 0.0;
  for (const auto& u : updates) total += static_cast<double>(u.sample_count);
  for (Eigen::Index i = 0; i < got.size(); ++i) {
    double expect = 0.0;
    for (const auto& u : updates) expect += static_cast<double>(u.sample_count) / total * u.params[i];
    if (std::abs(expect - got[i]) > kVerifyTolerance) {
      throw Error("fedavg verification failed at coordinate " + std::to_string(i) + ": expected " +
                  std::to_string(expect) + ", got " + std::to_string(got[i]));
    }
  }
}

}  // namespace

void SimConfig::validate() const {
  if (num_clients < 1) throw ValidationError("num_clients must be >= 1");
  if (clients_per_round < 1 || clients_per_round > num_clients) {
    throw ValidationError("clients_per_round must be in [1, num_clients]");
  }
  if (rounds < 1) throw ValidationError("rounds must be >= 1");
  if (eval_every < 1) throw ValidationError("eval_every must be >= 1");
  if (threads < 1) throw ValidationError("threads must be >= 1");
  arch.validate();
  train.validate();
  strategy.validate();
  attack.validate();
  if (attack.num_attackers > num_clients) {
    throw ValidationError("attack.num_attackers must be <= num_clients");
  }
  if (attack.source_label >= arch.num_classes || attack.target_label >= arch.num_classes) {
    throw ValidationError("attack labels must be < arch.num_classes");
  }
  if (strategy.kind == StrategyKind::residual_reweight && clients_per_round < 3) {
    throw ValidationError("residual_reweight needs clients_per_round >= 3");
  }
}

std::vector<int> sample_clients(int num_clients, int per_round, std::uint64_t seed, int round) {
  if (per_round < 1 || num_clients < 1) throw ValidationError("sample_clients: sizes must be >= 1");
  if (per_round > num_clients) {
    throw ValidationError("sample_clients: per_round (" + std::to_string(per_round) +
                          ") exceeds num_clients (" + std::to_string(num_clients) + ")");
  }
  std::vector<int> ids(static_cast<std::size_t>(num_clients));
  std::iota(ids.begin(), ids.end(), 0);
  if (per_round == num_clients) return ids;
  auto rng = make_stream(seed, {kSampleStream, static_cast<std::uint64_t>(round)});
  // Partial Fisher-Yates: the first per_round slots become the sample.
  for (int i = 0; i < per_round; ++i) {
    std::uniform_int_distribution<int> pick(i, num_clients - 1);
    std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(pick(rng))]);
  }
  ids.resize(static_cast<std::size_t>(per_round));
  std::sort(ids.begin(), ids.end());
  return ids;
}

double attack_success_rate(const Model& model, const Dataset& test, int source, int target) {
  const auto predictions = predict_all(model, test);
  std::int64_t total = 0;
  std::int64_t hit = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (test.labels[i] != source) continue;
    ++total;
    if (predictions[i] == target) ++hit;
  }
  if (total == 0) {
    throw ValidationError("attack_success_rate: test set has no examples of label " +
                          std::to_string(source));
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

RoundOutcome run_round(const SimState& state, const SimConfig& cfg, int round,
                       const RoundObserver& observer, const RoundReport* previous) {
  const std::string tag = "round " + std::to_string(round);
  RoundReport report;
  report.round = round;
  report.participant_ids =
      sample_clients(static_cast<int>(state.clients.size()), cfg.clients_per_round, cfg.seed, round);

  std::vector<ModelUpdate> updates(report.participant_ids.size());
  with_stage(tag + "/train", [&] {
    parallel_for(updates.size(), cfg.threads, [&](std::size_t i) {
      const auto& client = state.clients.at(static_cast<std::size_t>(report.participant_ids[i]));
      TrainConfig tc = client.is_attacker ? attacker_train_config(cfg.train, cfg.attack) : cfg.train;
      tc.seed = derive_seed(cfg.seed, {kTrainStream, static_cast<std::uint64_t>(round),
                                       static_cast<std::uint64_t>(client.client_id)});
      updates[i] = train_local(state.global, client, tc);
    });
  });
  for (int id : report.participant_ids) {
    if (state.clients[static_cast<std::size_t>(id)].is_attacker) ++report.attackers_in_round;
  }

  const ParamVector anchor = state.global.flat();
  const AggregationResult result =
      with_stage(tag + "/aggregate", [&] { return aggregate(cfg.strategy, anchor, updates); });
  if (cfg.verify_aggregation && cfg.strategy.kind == StrategyKind::fedavg) {
    with_stage(tag + "/verify", [&] { verify_fedavg(updates, result.global_params); });
  }
  if (observer) observer(RoundTrace{round, &anchor, updates, &result, &state.clients});

  report.aggregation_time = cfg.record_timing ? result.elapsed_seconds : 0.0;
  report.per_client_weights = result.per_client;

  RoundOutcome out{Model::from_flat(cfg.arch, result.global_params), std::move(report)};
  auto& rep = out.report;
  const bool due = (round + 1) % cfg.eval_every == 0 || round + 1 == cfg.rounds;
  if (due || previous == nullptr) {
    with_stage(tag + "/evaluate", [&] {
      const auto ev = evaluate(out.global, state.test);
      rep.accuracy = ev.accuracy;
      rep.mean_loss = ev.mean_loss;
      rep.attack_success_rate = attack_success_rate(out.global, state.test,
                                                    cfg.attack.source_label,
                                                    cfg.attack.target_label);
    });
    rep.evaluated = true;
  } else {
    rep.evaluated = false;
    rep.accuracy = previous->accuracy;
    rep.mean_loss = previous->mean_loss;
    rep.attack_success_rate = previous->attack_success_rate;
  }
  return out;
}

SimState prepare_state(const SimConfig& cfg, const Dataset& train, Dataset test) {
  cfg.validate();
  if (train.dim() != cfg.arch.input_dim || test.dim() != cfg.arch.input_dim) {
    throw StructuralError("data dimension " + std::to_string(train.dim()) +
                          " does not match arch.input_dim " + std::to_string(cfg.arch.input_dim));
  }
  test.validate(cfg.arch.num_classes);

  PartitionConfig pc;
  pc.num_clients = cfg.num_clients;
  pc.num_classes = cfg.arch.num_classes;
  pc.seed = derive_seed(cfg.seed, {kPartitionStream});

  SimState state;
  state.clients = with_stage("partition", [&] { return partition_iid(train, pc); });
  with_stage("attack", [&] {
    AttackConfig ac = cfg.attack;
    ac.seed = derive_seed(cfg.seed, {kAttackStream});
    inject_attack(state.clients, ac);
  });
  state.global = init_model(cfg.arch, derive_seed(cfg.seed, {kInitStream}));
  state.test = std::move(test);
  return state;
}

std::pair<Dataset, Dataset> load_data(const SimConfig& cfg) {
  const auto& d = cfg.data;
  Dataset train;
  Dataset test;
  if (d.synthetic) {
    const int per_class = d.synthetic_train_per_class + d.synthetic_test_per_class;
    const Dataset all =
        synthetic_dataset(cfg.arch.num_classes, d.synthetic_dim, per_class,
                          d.synthetic_separation, derive_seed(cfg.seed, {kSyntheticStream}));
    std::vector<Eigen::Index> train_rows;
    std::vector<Eigen::Index> test_rows;
    for (int c = 0; c < cfg.arch.num_classes; ++c) {
      for (int i = 0; i < per_class; ++i) {
        const Eigen::Index row = Eigen::Index{c} * per_class + i;
        (i < d.synthetic_train_per_class ? train_rows : test_rows).push_back(row);
      }
    }
    train = all.select(train_rows);
    test = all.select(test_rows);
  } else {
    if (d.mnist_dir.empty()) {
      throw ValidationError("no dataset: set data.mnist_dir, FEDSIM_MNIST_DIR or synthetic mode");
    }
    train = load_mnist_train(d.mnist_dir);
    test = load_mnist_test(d.mnist_dir);
  }
  if (d.train_limit > 0) train = train.head(d.train_limit);
  if (d.test_limit > 0) test = test.head(d.test_limit);
  return {std::move(train), std::move(test)};
}

ExperimentReport run_experiment(const SimConfig& cfg, const Dataset& train, const Dataset& test,
                                const RoundObserver& observer) {
  with_stage("config", [&] { cfg.validate(); });
  SimState state = with_stage("setup", [&] { return prepare_state(cfg, train, test); });

  ExperimentReport report;
  report.config = cfg;
  report.rounds.reserve(static_cast<std::size_t>(cfg.rounds));
  for (int r = 0; r < cfg.rounds; ++r) {
    const RoundReport* previous = report.rounds.empty() ? nullptr : &report.rounds.back();
    auto outcome = run_round(state, cfg, r, observer, previous);
    state.global = std::move(outcome.global);
    report.rounds.push_back(std::move(outcome.report));
  }

  auto& s = report.summary;
  s.final_accuracy = report.rounds.back().accuracy;
  s.final_loss = report.rounds.back().mean_loss;
  for (const auto& r : report.rounds) {
    s.mean_asr += r.attack_success_rate;
    s.mean_aggregation_time += r.aggregation_time;
  }
  s.mean_asr /= static_cast<double>(report.rounds.size());
  s.mean_aggregation_time /= static_cast<double>(report.rounds.size());
  return report;
}

ExperimentReport run_experiment(const SimConfig& cfg, const RoundObserver& observer) {
  with_stage("config", [&] { cfg.validate(); });
  auto [train, test] = with_stage("data", [&] { return load_data(cfg); });
  return run_experiment(cfg, train, test, observer);
}

}  // namespace fedsim
