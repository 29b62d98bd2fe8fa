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

#include "fedsim/adversary.hpp"

#include <algorithm>
#include <random>

#include "fedsim/random.hpp"

namespace fedsim {

void AttackConfig::validate() const {
  if (num_attackers < 0) throw ValidationError("attack.num_attackers must be >= 0");
  if (source_label == target_label) {
    throw ValidationError("attack.source_label and attack.target_label must differ");
  }
  if (source_label < 0 || target_label < 0) {
    throw ValidationError("attack labels must be non-negative");
  }
  if (extra_epochs < 0) throw ValidationError("attack.extra_epochs must be >= 0");
}

std::set<int> select_attackers(std::vector<ClientDataset>& clients, const AttackConfig& cfg) {
  cfg.validate();
  if (cfg.num_attackers > static_cast<int>(clients.size())) {
    throw ValidationError("attack.num_attackers (" + std::to_string(cfg.num_attackers) +
                          ") exceeds the number of clients (" + std::to_string(clients.size()) +
                          ")");
  }
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < clients.size(); ++i) {
    const auto& d = clients[i].digits;
    if (std::find(d.begin(), d.end(), cfg.source_label) != d.end()) eligible.push_back(i);
  }
  if (static_cast<int>(eligible.size()) < cfg.num_attackers) {
    throw ValidationError("select_attackers: need " + std::to_string(cfg.num_attackers) +
                          " clients holding label " + std::to_string(cfg.source_label) +
                          ", only " + std::to_string(eligible.size()) + " eligible");
  }
  auto rng = make_stream(cfg.seed, {kAttackStream});
  std::shuffle(eligible.begin(), eligible.end(), rng);
  std::set<int> chosen;
  for (int i = 0; i < cfg.num_attackers; ++i) {
    auto& c = clients[eligible[static_cast<std::size_t>(i)]];
    c.is_attacker = true;
    chosen.insert(c.client_id);
  }
  return chosen;
}

Dataset flip_labels(const Dataset& data, int source, int target) {
  Dataset out = data;
  std::replace(out.labels.begin(), out.labels.end(), source, target);
  return out;
}

TrainConfig attacker_train_config(const TrainConfig& base, const AttackConfig& cfg) {
  TrainConfig out = base;
  out.local_epochs += cfg.extra_epochs;
  return out;
}

std::set<int> inject_attack(std::vector<ClientDataset>& clients, const AttackConfig& cfg) {
  auto chosen = select_attackers(clients, cfg);
  for (auto& c : clients) {
    if (c.is_attacker) c.data = flip_labels(c.data, cfg.source_label, cfg.target_label);
  }
  return chosen;
}

}  // namespace fedsim
