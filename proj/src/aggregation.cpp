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

#include "fedsim/aggregation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace fedsim {

namespace {

constexpr double kMadConsistency = 1.4826;
constexpr double kScaleFloor = 1e-12;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

/// Validates the update list and returns it ordered by client_id, so that
/// every reduction runs in the same order regardless of input order.
std::vector<const ModelUpdate*> sorted_updates(std::span<const ModelUpdate> updates,
                                               const char* who) {
  if (updates.empty()) {
    throw ValidationError(std::string(who) + ": empty update list");
  }
  const auto len = updates.front().params.size();
  if (len == 0) throw ValidationError(std::string(who) + ": zero-length parameter vector");
  std::vector<const ModelUpdate*> out;
  out.reserve(updates.size());
  std::unordered_set<int> seen;
  for (const auto& u : updates) {
    if (u.params.size() != len) {
      throw StructuralError(std::string(who) + ": client " + std::to_string(u.client_id) +
                            " has " + std::to_string(u.params.size()) + " params, expected " +
                            std::to_string(len));
    }
    if (u.sample_count < 1) {
      throw ValidationError(std::string(who) + ": client " + std::to_string(u.client_id) +
                            " has sample_count < 1");
    }
    if (!seen.insert(u.client_id).second) {
      throw ValidationError(std::string(who) + ": duplicate client_id " +
                            std::to_string(u.client_id));
    }
    require_finite(u.params, std::string(who) + ": client " + std::to_string(u.client_id));
    out.push_back(&u);
  }
  std::sort(out.begin(), out.end(),
            [](const ModelUpdate* a, const ModelUpdate* b) { return a->client_id < b->client_id; });
  return out;
}

const ParamVector& params_of(const ModelUpdate* u) { return u->params; }

std::vector<ClientWeight> uniform_weights(const std::vector<const ModelUpdate*>& ordered) {
  std::vector<ClientWeight> out;
  const double w = 1.0 / static_cast<double>(ordered.size());
  for (const auto* u : ordered) out.push_back({u->client_id, 0.0, w});
  return out;
}

/// Median of `v` (reordered in place). Even sizes average the middle pair.
double median_inplace(std::span<double> v) {
  const auto n = v.size();
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (n % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(v.begin(), mid);
  return 0.5 * (lower + upper);
}

/// Gathers coordinate i of every client into `out`.
void gather(const std::vector<const double*>& columns, Eigen::Index i, std::vector<double>& out) {
  for (std::size_t k = 0; k < columns.size(); ++k) out[k] = columns[k][i];
}

std::vector<const double*> column_pointers(const std::vector<const ModelUpdate*>& ordered) {
  std::vector<const double*> cols;
  cols.reserve(ordered.size());
  for (const auto* u : ordered) cols.push_back(u->params.data());
  return cols;
}

}  // namespace

std::string_view to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::fedavg:
      return "fedavg";
    case StrategyKind::euclidean:
      return "euclidean";
    case StrategyKind::median:
      return "median";
    case StrategyKind::trimmed_mean:
      return "trimmed_mean";
    case StrategyKind::residual_reweight:
      return "residual_reweight";
  }
  return "unknown";
}

StrategyKind parse_strategy_kind(std::string_view name) {
  for (auto k : {StrategyKind::fedavg, StrategyKind::euclidean, StrategyKind::median,
                 StrategyKind::trimmed_mean, StrategyKind::residual_reweight}) {
    if (name == to_string(k)) return k;
  }
  throw ValidationError("unknown strategy '" + std::string(name) +
                        "' (expected fedavg, euclidean, median, trimmed_mean, residual_reweight)");
}

void StrategyConfig::validate() const {
  if (!(trim_fraction >= 0.0 && trim_fraction < 0.5)) {
    throw ValidationError("strategy.trim_fraction must be in [0, 0.5), got " +
                          std::to_string(trim_fraction));
  }
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw ValidationError("strategy.lambda must be a positive finite number");
  }
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw ValidationError("strategy.epsilon must be a positive finite number");
  }
}

AggregationResult fedavg(std::span<const ModelUpdate> updates) {
  const auto ordered = sorted_updates(updates, "fedavg");
  const auto start = Clock::now();

  double total = 0.0;
  for (const auto* u : ordered) total += static_cast<double>(u->sample_count);
  std::vector<double> weights;
  weights.reserve(ordered.size());
  for (const auto* u : ordered) weights.push_back(static_cast<double>(u->sample_count) / total);

  AggregationResult result;
  result.global_params = weighted_sum(ordered, weights, params_of);
  for (std::size_t k = 0; k < ordered.size(); ++k) {
    result.per_client.push_back({ordered[k]->client_id, 0.0, weights[k]});
  }
  result.elapsed_seconds = seconds_since(start);
  return result;
}

AggregationResult euclidean_aggregate(const ParamVector& global,
                                      std::span<const ModelUpdate> updates,
                                      const StrategyConfig& cfg) {
  const auto ordered = sorted_updates(updates, "euclidean_aggregate");
  if (global.size() != ordered.front()->params.size()) {
    throw StructuralError("euclidean_aggregate: global model has " +
                          std::to_string(global.size()) + " params, updates have " +
                          std::to_string(ordered.front()->params.size()));
  }
  require_finite(global, "euclidean_aggregate: global model");
  if (!(cfg.epsilon > 0.0)) throw ValidationError("euclidean_aggregate: epsilon must be > 0");
  const auto start = Clock::now();

  std::vector<double> distances;
  std::vector<double> inverse;
  distances.reserve(ordered.size());
  inverse.reserve(ordered.size());
  for (const auto* u : ordered) {
    const double e = euclidean_distance(global, u->params);
    if (!std::isfinite(e)) {
      throw ValidationError("euclidean_aggregate: non-finite distance for client " +
                            std::to_string(u->client_id));
    }
    distances.push_back(std::max(e, cfg.epsilon));
    inverse.push_back(1.0 / distances.back());
  }
  const double norm = std::accumulate(inverse.begin(), inverse.end(), 0.0);
  std::vector<double> weights(inverse.size());
  std::transform(inverse.begin(), inverse.end(), weights.begin(),
                 [norm](double v) { return v / norm; });

  AggregationResult result;
  result.global_params = weighted_sum(ordered, weights, params_of);
  for (std::size_t k = 0; k < ordered.size(); ++k) {
    result.per_client.push_back({ordered[k]->client_id, distances[k], weights[k]});
  }
  result.elapsed_seconds = seconds_since(start);
  return result;
}

AggregationResult coordinate_median(std::span<const ModelUpdate> updates) {
  const auto ordered = sorted_updates(updates, "coordinate_median");
  const auto start = Clock::now();

  const auto cols = column_pointers(ordered);
  const Eigen::Index len = ordered.front()->params.size();
  std::vector<double> buf(cols.size());
  AggregationResult result;
  result.global_params.resize(len);
  for (Eigen::Index i = 0; i < len; ++i) {
    gather(cols, i, buf);
    result.global_params[i] = median_inplace(buf);
  }
  result.per_client = uniform_weights(ordered);
  result.elapsed_seconds = seconds_since(start);
  return result;
}

AggregationResult trimmed_mean(std::span<const ModelUpdate> updates, double trim_fraction) {
  if (!(trim_fraction >= 0.0 && trim_fraction < 0.5)) {
    throw ValidationError("trimmed_mean: trim fraction must be in [0, 0.5), got " +
                          std::to_string(trim_fraction));
  }
  const auto ordered = sorted_updates(updates, "trimmed_mean");
  const auto start = Clock::now();

  const auto k_total = ordered.size();
  const auto trim = static_cast<std::size_t>(std::floor(trim_fraction * static_cast<double>(k_total)));
  const auto kept = k_total - 2 * trim;
  const auto cols = column_pointers(ordered);
  const Eigen::Index len = ordered.front()->params.size();
  std::vector<double> buf(k_total);
  AggregationResult result;
  result.global_params.resize(len);
  for (Eigen::Index i = 0; i < len; ++i) {
    gather(cols, i, buf);
    std::sort(buf.begin(), buf.end());
    double sum = 0.0;
    for (std::size_t k = trim; k < trim + kept; ++k) sum += buf[k];
    result.global_params[i] = sum / static_cast<double>(kept);
  }
  result.per_client = uniform_weights(ordered);
  result.elapsed_seconds = seconds_since(start);
  return result;
}

namespace {

/// Repeated-median fit on raw pointers. Returns false when every x is identical.
bool repeated_median_core(const double* x, const double* y, std::size_t n,
                          std::vector<double>& slopes, std::vector<double>& inner,
                          LineFit& fit) {
  slopes.clear();
  for (std::size_t i = 0; i < n; ++i) {
    inner.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || x[j] == x[i]) continue;
      inner.push_back((y[j] - y[i]) / (x[j] - x[i]));
    }
    if (!inner.empty()) slopes.push_back(median_inplace(inner));
  }
  if (slopes.empty()) return false;
  fit.slope = median_inplace(slopes);
  inner.clear();
  for (std::size_t i = 0; i < n; ++i) inner.push_back(y[i] - fit.slope * x[i]);
  fit.intercept = median_inplace(inner);
  return true;
}

}  // namespace

LineFit repeated_median_fit(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw StructuralError("repeated_median_fit: x and y have different lengths");
  }
  if (x.size() < 2) throw ValidationError("repeated_median_fit: need at least 2 points");
  std::vector<double> slopes;
  std::vector<double> inner;
  slopes.reserve(x.size());
  inner.reserve(x.size());
  LineFit fit;
  if (!repeated_median_core(x.data(), y.data(), x.size(), slopes, inner, fit)) {
    throw ValidationError("repeated_median_fit: all x values are identical");
  }
  return fit;
}

AggregationResult residual_reweighting(std::span<const ModelUpdate> updates, double lambda) {
  if (updates.size() < 3) {
    throw ValidationError("residual_reweighting: need at least 3 updates, got " +
                          std::to_string(updates.size()));
  }
  if (!(lambda > 0.0)) throw ValidationError("residual_reweighting: lambda must be > 0");
  const auto ordered = sorted_updates(updates, "residual_reweighting");
  const auto start = Clock::now();

  const std::size_t k_total = ordered.size();
  const auto cols = column_pointers(ordered);
  const Eigen::Index len = ordered.front()->params.size();

  std::vector<double> ranks(k_total);
  std::iota(ranks.begin(), ranks.end(), 1.0);
  std::vector<std::size_t> order(k_total);
  std::vector<double> raw(k_total);
  std::vector<double> sorted(k_total);
  std::vector<double> residual(k_total);
  std::vector<double> scratch;
  std::vector<double> slopes;
  std::vector<double> inner;
  scratch.reserve(k_total);
  slopes.reserve(k_total);
  inner.reserve(k_total);
  std::vector<double> confidence(k_total, 0.0);

  for (Eigen::Index i = 0; i < len; ++i) {
    gather(cols, i, raw);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return raw[a] < raw[b] || (raw[a] == raw[b] && a < b);
    });
    for (std::size_t r = 0; r < k_total; ++r) sorted[r] = raw[order[r]];

    LineFit fit;
    repeated_median_core(ranks.data(), sorted.data(), k_total, slopes, inner, fit);

    scratch.clear();
    for (std::size_t r = 0; r < k_total; ++r) {
      residual[r] = sorted[r] - (fit.slope * ranks[r] + fit.intercept);
      scratch.push_back(std::abs(residual[r]));
    }
    const double scale = kMadConsistency * median_inplace(scratch);
    for (std::size_t r = 0; r < k_total; ++r) {
      const double z = std::abs(residual[r]) / (scale + kScaleFloor);
      confidence[order[r]] += z <= lambda ? 1.0 : lambda / z;
    }
  }

  std::vector<double> weights(k_total);
  for (std::size_t k = 0; k < k_total; ++k) weights[k] = confidence[k] / static_cast<double>(len);
  const double norm = std::accumulate(weights.begin(), weights.end(), 0.0);
  for (auto& w : weights) w /= norm;

  AggregationResult result;
  result.global_params = weighted_sum(ordered, weights, params_of);
  for (std::size_t k = 0; k < k_total; ++k) {
    result.per_client.push_back({ordered[k]->client_id, 0.0, weights[k]});
  }
  result.elapsed_seconds = seconds_since(start);
  return result;
}

AggregationResult aggregate(const StrategyConfig& cfg, const ParamVector& global,
                            std::span<const ModelUpdate> updates) {
  switch (cfg.kind) {
    case StrategyKind::fedavg:
      return fedavg(updates);
    case StrategyKind::euclidean:
      return euclidean_aggregate(global, updates, cfg);
    case StrategyKind::median:
      return coordinate_median(updates);
    case StrategyKind::trimmed_mean:
      return trimmed_mean(updates, cfg.trim_fraction);
    case StrategyKind::residual_reweight:
      return residual_reweighting(updates, cfg.lambda);
  }
  throw ValidationError("aggregate: unknown strategy");
}

}  // namespace fedsim
