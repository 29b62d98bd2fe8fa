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
#include <set>
#include <vector>

#include "fedsim/datasets.hpp"
#include "fedsim/learner.hpp"

namespace fedsim {

/// Label-flipping attackers: `num_attackers` clients holding `source_label`
/// relabel it as `target_label` and train `extra_epochs` more than honest clients.
struct AttackConfig {
  int num_attackers = 0;
  int source_label = 1;
  int target_label = 7;
  int extra_epochs = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Picks attackers among clients whose classes include the source label and
/// sets their is_attacker flag. Throws ValidationError when too few are eligible.
std::set<int> select_attackers(std::vector<ClientDataset>& clients, const AttackConfig& cfg);

Dataset flip_labels(const Dataset& data, int source, int target);

TrainConfig attacker_train_config(const TrainConfig& base, const AttackConfig& cfg);

/// select_attackers followed by flip_labels on every selected client.
std::set<int> inject_attack(std::vector<ClientDataset>& clients, const AttackConfig& cfg);

}  // namespace fedsim
