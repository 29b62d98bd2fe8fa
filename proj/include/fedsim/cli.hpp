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
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedsim/simulator.hpp"

namespace fedsim {

constexpr const char* kRoundsCsvHeader = "round,accuracy,loss,asr,agg_time_s,attackers_in_round";
constexpr const char* kBenchCsvHeader = "strategy,clients,t,repeats,median_s";
constexpr const char* kMnistDirEnv = "FEDSIM_MNIST_DIR";

struct BenchConfig {
  int clients = 10;
  std::vector<std::int64_t> sizes = {100000, 200000, 400000};
  std::vector<StrategyKind> strategies = {StrategyKind::fedavg, StrategyKind::euclidean,
                                          StrategyKind::residual_reweight};
  int repeats = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct BenchRow {
  StrategyKind strategy = StrategyKind::euclidean;
  int clients = 0;
  std::int64_t size = 0;
  int repeats = 0;
  double median_seconds = 0.0;
};

/// Everything one invocation of the command-line tool needs.
struct CliOptions {
  SimConfig sim;
  std::string output_dir = "fedsim_out";
  std::vector<StrategyKind> compare;  // non-empty: one run per strategy
  bool bench = false;
  BenchConfig bench_cfg;
};

// JSON documents ------------------------------------------------------------

/// Serializes the config; strategy parameters appear only for the strategy
/// that uses them.
nlohmann::json config_to_json(const SimConfig& cfg);

/// Strict parse: unknown keys, wrong types and strategy parameters that do
/// not apply to the selected strategy are FormatError/ValidationError naming
/// the key. Missing keys keep the values already in `base`.
SimConfig config_from_json(const nlohmann::json& doc, SimConfig base = {});

nlohmann::json report_to_json(const ExperimentReport& report);

/// `round,accuracy,loss,asr,agg_time_s,attackers_in_round`, one row per round.
std::string rounds_csv(const ExperimentReport& report);

std::string bench_csv(const std::vector<BenchRow>& rows);

/// Locale-independent decimal text with up to 10 significant digits.
std::string format_number(double v);

// Commands ------------------------------------------------------------------

/// Builds options from defaults, then the --config file, then flags. Throws
/// ValidationError/FormatError naming the offending key on bad input.
CliOptions parse_config(const std::vector<std::string>& args);

/// Runs the experiment (or one per compared strategy) and writes rounds.csv
/// and report.json under opts.output_dir. Returns the process exit status.
int run_command(const CliOptions& opts, std::ostream& out, std::ostream& err);

/// Median-of-repeats aggregation time for every (strategy, size) pair on
/// synthetic updates.
std::vector<BenchRow> bench_command(const BenchConfig& cfg);

/// parse_config + run_command/bench, with errors mapped to exit codes.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fedsim
