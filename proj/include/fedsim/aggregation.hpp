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
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedsim/param_tensor.hpp"

namespace fedsim {

enum class StrategyKind { fedavg, euclidean, median, trimmed_mean, residual_reweight };

std::string_view to_string(StrategyKind kind);
/// Accepts the canonical names used by to_string(). Throws ValidationError otherwise.
StrategyKind parse_strategy_kind(std::string_view name);

struct StrategyConfig {
  StrategyKind kind = StrategyKind::euclidean;
  double trim_fraction = 0.1;  // trimmed_mean
  double lambda = 2.0;         // residual_reweight
  double epsilon = 1e-12;      // euclidean: floor applied to each distance

  void validate() const;
};

/// One client's contribution to a round.
struct ModelUpdate {
  int client_id = 0;
  ParamVector params;
  std::int64_t sample_count = 1;
};

struct ClientWeight {
  int client_id = 0;
  double distance = 0.0;
  double weight = 0.0;
};

/// `per_client` is ordered by client_id regardless of input order.
struct AggregationResult {
  ParamVector global_params;
  std::vector<ClientWeight> per_client;
  double elapsed_seconds = 0.0;
};

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

/// Data-size weighted mean: sum_k (D_k / D) M_k.
AggregationResult fedavg(std::span<const ModelUpdate> updates);

/// Inverse-distance weighting against the current global model.
///
/// Each client's distance e_k = |global - M_k| is floored at `cfg.epsilon`,
/// its weight is (1/e_k) / sum_j (1/e_j), and the new global model is the
/// weighted sum of the client parameters. Clients far from the current global
/// model therefore contribute little. Sample counts are ignored.
AggregationResult euclidean_aggregate(const ParamVector& global,
                                      std::span<const ModelUpdate> updates,
                                      const StrategyConfig& cfg = {});

/// Per-coordinate median; even client counts average the two middle values.
AggregationResult coordinate_median(std::span<const ModelUpdate> updates);

/// Per-coordinate mean after dropping floor(beta*K) values from each end.
AggregationResult trimmed_mean(std::span<const ModelUpdate> updates, double trim_fraction);

/// Siegel repeated-median line fit:
///   slope     = med_i med_{j : x_j != x_i} (y_j - y_i) / (x_j - x_i)
///   intercept = med_i (y_i - slope * x_i)
LineFit repeated_median_fit(std::span<const double> x, std::span<const double> y);

/// Residual-confidence reweighting baseline.
///
/// For every coordinate the client values are sorted and a repeated-median
/// line is fit through (rank, value). Residuals are standardized by
/// 1.4826 * MAD and turned into a confidence in (0, 1] that saturates at 1
/// when |r| <= lambda. A client's weight is its mean confidence over all
/// coordinates, normalized across clients. Cost is O(t K^2).
AggregationResult residual_reweighting(std::span<const ModelUpdate> updates, double lambda);

/// Dispatches on cfg.kind. `global` is only read by the euclidean strategy.
AggregationResult aggregate(const StrategyConfig& cfg, const ParamVector& global,
                            std::span<const ModelUpdate> updates);

}  // namespace fedsim
