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

#include "fedsim/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "fedsim/random.hpp"

namespace fedsim {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct HelpRequested : Error {
  using Error::Error;
};

/// Reads keys out of one JSON object and rejects anything left unread.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw FormatError("config: '" + name_or_root() + "' must be an object");
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  void read(const std::string& key, int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) type_error(key, "an integer");
      const auto raw = v->get<std::int64_t>();
      if (raw < std::numeric_limits<int>::min() || raw > std::numeric_limits<int>::max()) {
        throw ValidationError("config: '" + qualified(key) + "' is out of range");
      }
      out = static_cast<int>(raw);
    }
  }

  void read(const std::string& key, std::int64_t& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) type_error(key, "an integer");
      out = v->get<std::int64_t>();
    }
  }

  void read(const std::string& key, std::uint64_t& out) {
    if (const json* v = take(key)) {
      if (v->is_number_unsigned()) {
        out = v->get<std::uint64_t>();
      } else if (v->is_number_integer() && v->get<std::int64_t>() >= 0) {
        out = static_cast<std::uint64_t>(v->get<std::int64_t>());
      } else {
        type_error(key, "a non-negative integer");
      }
    }
  }

  void read(const std::string& key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) type_error(key, "a number");
      out = v->get<double>();
    }
  }

  void read(const std::string& key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) type_error(key, "a boolean");
      out = v->get<bool>();
    }
  }

  void read(const std::string& key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) type_error(key, "a string");
      out = v->get<std::string>();
    }
  }

  const json* child(const std::string& key) { return take(key); }

  std::string qualified(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.contains(key)) throw FormatError("config: unknown key '" + qualified(key) + "'");
    }
  }

 private:
  const json* take(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  [[noreturn]] void type_error(const std::string& key, const char* expected) const {
    throw FormatError("config: '" + qualified(key) + "' must be " + expected);
  }

  std::string name_or_root() const { return path_.empty() ? "<root>" : path_; }

  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<StrategyKind> parse_strategy_list(const std::string& text) {
  std::vector<StrategyKind> out;
  for (const auto& s : split_list(text)) out.push_back(parse_strategy_kind(s));
  if (out.empty()) throw ValidationError("empty strategy list");
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
}

/// Fails early, before any computation, when `dir` cannot receive output.
void ensure_writable(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  const auto probe = dir / ".fedsim_write_probe";
  {
    std::ofstream f(probe);
    if (!f) throw IoError("output directory " + dir.string() + " is not writable");
  }
  fs::remove(probe, ec);
}

json weights_to_json(const std::vector<ClientWeight>& weights) {
  json arr = json::array();
  for (const auto& w : weights) {
    arr.push_back({{"client_id", w.client_id}, {"distance", w.distance}, {"weight", w.weight}});
  }
  return arr;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 10);
  return std::string(buf, res.ptr);
}

void BenchConfig::validate() const {
  if (clients < 1) throw ValidationError("bench clients must be >= 1");
  if (repeats < 1) throw ValidationError("bench repeats must be >= 1");
  if (sizes.empty()) throw ValidationError("bench sizes must not be empty");
  for (auto t : sizes) {
    if (t < 1) throw ValidationError("bench sizes must be positive");
  }
  if (strategies.empty()) throw ValidationError("bench strategies must not be empty");
  for (auto s : strategies) {
    if (s == StrategyKind::residual_reweight && clients < 3) {
      throw ValidationError("residual_reweight benchmark needs at least 3 clients");
    }
  }
}

json config_to_json(const SimConfig& cfg) {
  json strategy = {{"kind", std::string(to_string(cfg.strategy.kind))}};
  switch (cfg.strategy.kind) {
    case StrategyKind::euclidean:
      strategy["epsilon"] = cfg.strategy.epsilon;
      break;
    case StrategyKind::trimmed_mean:
      strategy["trim_fraction"] = cfg.strategy.trim_fraction;
      break;
    case StrategyKind::residual_reweight:
      strategy["lambda"] = cfg.strategy.lambda;
      break;
    default:
      break;
  }
  const auto& d = cfg.data;
  return {
      {"num_clients", cfg.num_clients},
      {"clients_per_round", cfg.clients_per_round},
      {"rounds", cfg.rounds},
      {"seed", cfg.seed},
      {"eval_every", cfg.eval_every},
      {"threads", cfg.threads},
      {"record_timing", cfg.record_timing},
      {"verify_aggregation", cfg.verify_aggregation},
      {"arch",
       {{"kind", std::string(to_string(cfg.arch.kind))},
        {"input_dim", cfg.arch.input_dim},
        {"hidden_dim", cfg.arch.hidden_dim},
        {"num_classes", cfg.arch.num_classes}}},
      {"train",
       {{"learning_rate", cfg.train.learning_rate},
        {"local_epochs", cfg.train.local_epochs},
        {"batch_size", cfg.train.batch_size}}},
      {"strategy", strategy},
      {"attack",
       {{"num_attackers", cfg.attack.num_attackers},
        {"source_label", cfg.attack.source_label},
        {"target_label", cfg.attack.target_label},
        {"extra_epochs", cfg.attack.extra_epochs}}},
      {"data",
       {{"mnist_dir", d.mnist_dir},
        {"synthetic", d.synthetic},
        {"train_limit", d.train_limit},
        {"test_limit", d.test_limit},
        {"synthetic_dim", d.synthetic_dim},
        {"synthetic_train_per_class", d.synthetic_train_per_class},
        {"synthetic_test_per_class", d.synthetic_test_per_class},
        {"synthetic_separation", d.synthetic_separation}}},
  };
}

SimConfig config_from_json(const json& doc, SimConfig cfg) {
  ObjectReader root(doc, "");
  root.read("num_clients", cfg.num_clients);
  root.read("clients_per_round", cfg.clients_per_round);
  root.read("rounds", cfg.rounds);
  root.read("seed", cfg.seed);
  root.read("eval_every", cfg.eval_every);
  root.read("threads", cfg.threads);
  root.read("record_timing", cfg.record_timing);
  root.read("verify_aggregation", cfg.verify_aggregation);

  if (const json* a = root.child("arch")) {
    ObjectReader r(*a, "arch");
    std::string kind(to_string(cfg.arch.kind));
    r.read("kind", kind);
    cfg.arch.kind = parse_arch_kind(kind);
    r.read("input_dim", cfg.arch.input_dim);
    r.read("hidden_dim", cfg.arch.hidden_dim);
    r.read("num_classes", cfg.arch.num_classes);
    r.finish();
  }
  if (const json* t = root.child("train")) {
    ObjectReader r(*t, "train");
    r.read("learning_rate", cfg.train.learning_rate);
    r.read("local_epochs", cfg.train.local_epochs);
    r.read("batch_size", cfg.train.batch_size);
    r.finish();
  }
  if (const json* s = root.child("strategy")) {
    ObjectReader r(*s, "strategy");
    std::string kind(to_string(cfg.strategy.kind));
    r.read("kind", kind);
    cfg.strategy.kind = parse_strategy_kind(kind);
    const std::pair<const char*, StrategyKind> owners[] = {
        {"epsilon", StrategyKind::euclidean},
        {"trim_fraction", StrategyKind::trimmed_mean},
        {"lambda", StrategyKind::residual_reweight}};
    for (const auto& [key, owner] : owners) {
      if (r.has(key) && owner != cfg.strategy.kind) {
        throw ValidationError("config: 'strategy." + std::string(key) +
                              "' only applies to strategy " + std::string(to_string(owner)) +
                              ", not " + std::string(to_string(cfg.strategy.kind)));
      }
    }
    r.read("epsilon", cfg.strategy.epsilon);
    r.read("trim_fraction", cfg.strategy.trim_fraction);
    r.read("lambda", cfg.strategy.lambda);
    r.finish();
  }
  if (const json* a = root.child("attack")) {
    ObjectReader r(*a, "attack");
    r.read("num_attackers", cfg.attack.num_attackers);
    r.read("source_label", cfg.attack.source_label);
    r.read("target_label", cfg.attack.target_label);
    r.read("extra_epochs", cfg.attack.extra_epochs);
    r.finish();
  }
  if (const json* d = root.child("data")) {
    ObjectReader r(*d, "data");
    r.read("mnist_dir", cfg.data.mnist_dir);
    r.read("synthetic", cfg.data.synthetic);
    r.read("train_limit", cfg.data.train_limit);
    r.read("test_limit", cfg.data.test_limit);
    r.read("synthetic_dim", cfg.data.synthetic_dim);
    r.read("synthetic_train_per_class", cfg.data.synthetic_train_per_class);
    r.read("synthetic_test_per_class", cfg.data.synthetic_test_per_class);
    r.read("synthetic_separation", cfg.data.synthetic_separation);
    r.finish();
  }
  root.finish();
  return cfg;
}

json report_to_json(const ExperimentReport& report) {
  json rounds = json::array();
  for (const auto& r : report.rounds) {
    rounds.push_back({{"round", r.round},
                      {"participant_ids", r.participant_ids},
                      {"attackers_in_round", r.attackers_in_round},
                      {"evaluated", r.evaluated},
                      {"accuracy", r.accuracy},
                      {"mean_loss", r.mean_loss},
                      {"attack_success_rate", r.attack_success_rate},
                      {"aggregation_time", r.aggregation_time},
                      {"per_client_weights", weights_to_json(r.per_client_weights)}});
  }
  const auto& s = report.summary;
  return {{"config", config_to_json(report.config)},
          {"rounds", rounds},
          {"summary",
           {{"final_accuracy", s.final_accuracy},
            {"final_loss", s.final_loss},
            {"mean_asr", s.mean_asr},
            {"mean_aggregation_time", s.mean_aggregation_time}}}};
}

std::string rounds_csv(const ExperimentReport& report) {
  std::string out = kRoundsCsvHeader;
  out += '\n';
  for (const auto& r : report.rounds) {
    out += std::to_string(r.round) + ',' + format_number(r.accuracy) + ',' +
           format_number(r.mean_loss) + ',' + format_number(r.attack_success_rate) + ',' +
           format_number(r.aggregation_time) + ',' + std::to_string(r.attackers_in_round) + '\n';
  }
  return out;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = kBenchCsvHeader;
  out += '\n';
  for (const auto& r : rows) {
    out += std::string(to_string(r.strategy)) + ',' + std::to_string(r.clients) + ',' +
           std::to_string(r.size) + ',' + std::to_string(r.repeats) + ',' +
           format_number(r.median_seconds) + '\n';
  }
  return out;
}

CliOptions parse_config(const std::vector<std::string>& args) {
  CLI::App app{"Federated-learning simulator with robust aggregation strategies", "fedsim"};

  std::string config_path;
  std::string strategy;
  std::string arch;
  std::string mnist_dir;
  std::string out_dir;
  std::string compare;
  std::string bench_sizes;
  std::string bench_strategies;
  int attackers = 0;
  int rounds = 0;
  int clients = 0;
  int per_round = 0;
  int threads = 0;
  int eval_every = 0;
  int bench_clients = 0;
  int bench_repeats = 0;
  std::uint64_t seed = 0;
  std::int64_t train_limit = 0;
  std::int64_t test_limit = 0;
  bool synthetic = false;
  bool bench = false;
  bool no_timing = false;
  bool verify = false;

  app.add_option("--config", config_path, "JSON experiment config");
  auto* o_strategy = app.add_option(
      "--strategy", strategy, "fedavg | euclidean | median | trimmed_mean | residual_reweight");
  auto* o_attackers = app.add_option("--attackers", attackers, "number of label-flipping clients");
  auto* o_rounds = app.add_option("--rounds", rounds, "communication rounds");
  auto* o_clients = app.add_option("--clients", clients, "total clients K");
  auto* o_per_round = app.add_option("--per-round", per_round, "clients sampled per round");
  auto* o_seed = app.add_option("--seed", seed, "master seed");
  auto* o_mnist = app.add_option("--mnist-dir", mnist_dir, "directory holding the MNIST IDX files");
  app.add_flag("--synthetic", synthetic, "use the synthetic Gaussian-blob corpus");
  auto* o_out = app.add_option("--out", out_dir, "output directory");
  app.add_flag("--bench", bench, "run the aggregation timing benchmark instead");
  auto* o_compare =
      app.add_option("--compare", compare, "comma-separated strategies to run with shared seeds");
  auto* o_arch = app.add_option("--arch", arch, "logreg | mlp");
  auto* o_train_limit = app.add_option("--train-limit", train_limit, "use the first N training examples");
  auto* o_test_limit = app.add_option("--test-limit", test_limit, "use the first N test examples");
  auto* o_threads = app.add_option("--threads", threads, "local-training worker threads");
  auto* o_eval = app.add_option("--eval-every", eval_every, "evaluate every N rounds");
  app.add_flag("--no-timing", no_timing, "report aggregation time as 0 (byte-reproducible output)");
  app.add_flag("--verify", verify, "cross-check fedavg against a brute-force recomputation");
  auto* o_bench_clients = app.add_option("--bench-clients", bench_clients, "benchmark client count");
  auto* o_bench_sizes = app.add_option("--bench-sizes", bench_sizes, "comma-separated vector lengths");
  auto* o_bench_repeats = app.add_option("--bench-repeats", bench_repeats, "repeats per cell");
  auto* o_bench_strategies =
      app.add_option("--bench-strategies", bench_strategies, "comma-separated strategies");

  std::vector<const char*> argv;
  argv.push_back("fedsim");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    throw HelpRequested(app.help());
  } catch (const CLI::ParseError& e) {
    throw ValidationError(std::string("command line: ") + e.what());
  }

  CliOptions opts;
  if (!config_path.empty()) {
    json doc;
    try {
      std::ifstream f(config_path);
      if (!f) throw IoError("cannot read config " + config_path);
      doc = json::parse(f);
    } catch (const json::parse_error& e) {
      throw FormatError("config " + config_path + " is malformed: " + e.what());
    }
    if (!doc.is_object()) throw FormatError("config " + config_path + " must be a JSON object");
    if (auto it = doc.find("output_dir"); it != doc.end()) {
      if (!it->is_string()) throw FormatError("config: 'output_dir' must be a string");
      opts.output_dir = it->get<std::string>();
      doc.erase(it);
    }
    opts.sim = config_from_json(doc, opts.sim);
  }

  auto& sim = opts.sim;
  if (o_strategy->count()) sim.strategy.kind = parse_strategy_kind(strategy);
  if (o_attackers->count()) sim.attack.num_attackers = attackers;
  if (o_rounds->count()) sim.rounds = rounds;
  if (o_clients->count()) sim.num_clients = clients;
  if (o_per_round->count()) sim.clients_per_round = per_round;
  if (o_seed->count()) sim.seed = seed;
  if (o_mnist->count()) sim.data.mnist_dir = mnist_dir;
  if (synthetic) sim.data.synthetic = true;
  if (o_out->count()) opts.output_dir = out_dir;
  if (o_arch->count()) sim.arch.kind = parse_arch_kind(arch);
  if (o_train_limit->count()) sim.data.train_limit = train_limit;
  if (o_test_limit->count()) sim.data.test_limit = test_limit;
  if (o_threads->count()) sim.threads = threads;
  if (o_eval->count()) sim.eval_every = eval_every;
  if (no_timing) sim.record_timing = false;
  if (verify) sim.verify_aggregation = true;
  if (o_compare->count()) opts.compare = parse_strategy_list(compare);

  if (!sim.data.synthetic && sim.data.mnist_dir.empty()) {
    if (const char* env = std::getenv(kMnistDirEnv); env != nullptr) sim.data.mnist_dir = env;
  }

  opts.bench = bench;
  opts.bench_cfg.seed = sim.seed;
  if (o_bench_clients->count()) opts.bench_cfg.clients = bench_clients;
  if (o_bench_repeats->count()) opts.bench_cfg.repeats = bench_repeats;
  if (o_bench_strategies->count()) opts.bench_cfg.strategies = parse_strategy_list(bench_strategies);
  if (o_bench_sizes->count()) {
    opts.bench_cfg.sizes.clear();
    for (const auto& s : split_list(bench_sizes)) {
      std::int64_t v = 0;
      const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
      if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw ValidationError("--bench-sizes: '" + s + "' is not an integer");
      }
      opts.bench_cfg.sizes.push_back(v);
    }
  }

  if (opts.bench) {
    opts.bench_cfg.validate();
  } else {
    sim.validate();
  }
  return opts;
}

std::vector<BenchRow> bench_command(const BenchConfig& cfg) {
  cfg.validate();
  std::vector<BenchRow> rows;
  for (const auto t : cfg.sizes) {
    auto rng = make_stream(cfg.seed, {kBenchStream, static_cast<std::uint64_t>(t)});
    std::normal_distribution<double> normal(0.0, 1.0);
    ParamVector global(t);
    for (Eigen::Index i = 0; i < t; ++i) global[i] = normal(rng);
    std::vector<ModelUpdate> updates(static_cast<std::size_t>(cfg.clients));
    for (int k = 0; k < cfg.clients; ++k) {
      auto& u = updates[static_cast<std::size_t>(k)];
      u.client_id = k;
      u.sample_count = 1;
      u.params.resize(t);
      for (Eigen::Index i = 0; i < t; ++i) u.params[i] = global[i] + 0.1 * normal(rng);
    }
    for (const auto kind : cfg.strategies) {
      StrategyConfig sc;
      sc.kind = kind;
      std::vector<double> times;
      times.reserve(static_cast<std::size_t>(cfg.repeats));
      for (int r = 0; r < cfg.repeats; ++r) times.push_back(aggregate(sc, global, updates).elapsed_seconds);
      rows.push_back({kind, cfg.clients, t, cfg.repeats, median_of(times)});
    }
  }
  return rows;
}

int run_command(const CliOptions& opts, std::ostream& out, std::ostream& err) {
  try {
    const fs::path dir = opts.output_dir;
    ensure_writable(dir);

    if (opts.bench) {
      const auto rows = bench_command(opts.bench_cfg);
      const auto csv = bench_csv(rows);
      write_text(dir / "bench.csv", csv);
      out << csv;
      return 0;
    }

    const bool comparing = !opts.compare.empty();
    const std::vector<StrategyKind> kinds =
        comparing ? opts.compare : std::vector<StrategyKind>{opts.sim.strategy.kind};

    opts.sim.validate();
    std::pair<Dataset, Dataset> data;
    try {
      data = load_data(opts.sim);
    } catch (const std::exception& e) {
      throw StageError("data", e.what());
    }

    for (const auto kind : kinds) {
      SimConfig cfg = opts.sim;
      cfg.strategy.kind = kind;
      const auto report = run_experiment(cfg, data.first, data.second);
      const std::string suffix = comparing ? "_" + std::string(to_string(kind)) : "";
      write_text(dir / ("rounds" + suffix + ".csv"), rounds_csv(report));
      write_text(dir / ("report" + suffix + ".json"), report_to_json(report).dump(2) + "\n");
      out << "strategy=" << to_string(kind) << " rounds=" << report.rounds.size()
          << " final_accuracy=" << format_number(report.summary.final_accuracy)
          << " final_loss=" << format_number(report.summary.final_loss)
          << " mean_asr=" << format_number(report.summary.mean_asr)
          << " mean_agg_time_s=" << format_number(report.summary.mean_aggregation_time) << '\n';
    }
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CliOptions opts;
  try {
    opts = parse_config(args);
  } catch (const HelpRequested& h) {
    out << h.what();
    return 0;
  } catch (const std::exception& e) {
    err << "error: [config] " << e.what() << '\n';
    return 2;
  }
  return run_command(opts, out, err);
}

}  // namespace fedsim
