#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "fedsim/checkpoint.hpp"
#include "fedsim/client.hpp"
#include "fedsim/common.hpp"
#include "fedsim/data.hpp"
#include "fedsim/dual_model.hpp"
#include "fedsim/server.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

enum class RunMode { kDistrans, kFedavg, kSingleChannel };

inline std::optional<RunMode> parse_mode(const std::string& s) {
  if (s == "distrans") return RunMode::kDistrans;
  if (s == "fedavg") return RunMode::kFedavg;
  if (s == "single_channel") return RunMode::kSingleChannel;
  return std::nullopt;
}

inline const char* mode_name(RunMode m) {
  switch (m) {
    case RunMode::kDistrans: return "distrans";
    case RunMode::kFedavg: return "fedavg";
    case RunMode::kSingleChannel: return "single_channel";
  }
  return "?";
}

/// Everything one run needs. Flat on purpose: each field maps 1:1 to a CLI
/// flag and to a `key = value` line in a config file.
struct ExperimentConfig {
  // dataset (ignored when partition_path is set)
  int classes = 8;
  int per_class = 60;
  int dim = 16;
  double spread = 1.0;
  double split_fraction = 0.8;
  std::string partition_path;  // frozen partition JSON

  // federation
  int clients = 8;
  int classes_per_client = 1;
  int rounds = 50;
  int epochs = 1;
  int batch = 8;
  double alpha = 0.3;
  double lr_model = 5e-3;
  double lr_offset = 1e-3;
  std::string strategy = "auto";
  std::string mode = "distrans";
  double dh_threshold = 0.5;

  // model
  std::vector<std::size_t> hidden = {64, 32};
  std::size_t dense_width = 32;

  // offset aggregator
  double agg_lr = 1e-2;
  int agg_steps = 200;
  int agg_hidden = 64;
  bool agg_warm_start = true;

  // run control
  std::uint64_t seed = 1;
  std::string outdir;
  int workers = 1;  // 0 = hardware concurrency
  bool step_log = false;
  bool negative_eval = false;
  double reject_margin = 0.05;

  void validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
    if (!parse_mode(mode)) fail("unknown mode '" + mode + "'");
    if (!parse_strategy(strategy)) fail("unknown strategy '" + strategy + "'");
    if (rounds < 1) fail("rounds must be >= 1");
    if (epochs < 1) fail("epochs must be >= 1");
    if (batch < 1) fail("batch must be >= 1");
    if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha must lie in [0,1]");
    if (lr_model < 0.0 || lr_offset < 0.0) fail("learning rates must be >= 0");
    if (!(dh_threshold >= 0.0 && dh_threshold <= 1.0)) fail("dh_threshold must lie in [0,1]");
    if (partition_path.empty()) {
      if (classes < 2) fail("classes must be >= 2");
      if (per_class < 1) fail("per_class must be >= 1");
      if (dim < 1) fail("dim must be >= 1");
      if (!(spread > 0.0)) fail("spread must be > 0");
      if (!(split_fraction > 0.0 && split_fraction < 1.0)) fail("split_fraction in (0,1)");
      if (clients < 1) fail("clients must be >= 1");
      if (classes_per_client < 1) fail("classes_per_client must be >= 1");
    }
    if (hidden.empty()) fail("need at least one hidden layer");
    if (dense_width < 1) fail("dense_width must be >= 1");
    if (agg_steps < 1) fail("agg_steps must be >= 1");
    if (agg_hidden < 1) fail("agg_hidden must be >= 1");
    if (agg_lr < 0.0) fail("agg_lr must be >= 0");
    if (workers < 0) fail("workers must be >= 0");
    if (reject_margin < 0.0) fail("reject_margin must be >= 0");
  }

  /// mode=fedavg pins alpha to 0, freezes offsets at zero and skips
  /// aggregation; the dual network then degenerates to plain FedAvg.
  ExperimentConfig normalized() const {
    ExperimentConfig out = *this;
    if (parse_mode(mode) == RunMode::kFedavg) {
      out.alpha = 0.0;
      out.lr_offset = 0.0;
      out.strategy = "none";
    }
    return out;
  }
};

// --- config file -------------------------------------------------------------
//
// Flat `key = value` lines; '#' starts a comment. Keys match the field names
// above; `hidden` takes a comma list (e.g. hidden = 64,32).

inline void apply_config_entry(ExperimentConfig& cfg, const std::string& key,
                               const std::string& value) {
  auto as_int = [&](int& slot) {
    try {
      slot = std::stoi(value);
    } catch (...) {
      throw ConfigError("config: bad integer for " + key + ": '" + value + "'");
    }
  };
  auto as_double = [&](double& slot) {
    try {
      slot = std::stod(value);
    } catch (...) {
      throw ConfigError("config: bad number for " + key + ": '" + value + "'");
    }
  };
  auto as_bool = [&](bool& slot) {
    if (value == "true" || value == "1")
      slot = true;
    else if (value == "false" || value == "0")
      slot = false;
    else
      throw ConfigError("config: bad bool for " + key + ": '" + value + "'");
  };

  if (key == "classes") as_int(cfg.classes);
  else if (key == "per_class") as_int(cfg.per_class);
  else if (key == "dim") as_int(cfg.dim);
  else if (key == "spread") as_double(cfg.spread);
  else if (key == "split_fraction") as_double(cfg.split_fraction);
  else if (key == "partition_path") cfg.partition_path = value;
  else if (key == "clients") as_int(cfg.clients);
  else if (key == "classes_per_client") as_int(cfg.classes_per_client);
  else if (key == "rounds") as_int(cfg.rounds);
  else if (key == "epochs") as_int(cfg.epochs);
  else if (key == "batch") as_int(cfg.batch);
  else if (key == "alpha") as_double(cfg.alpha);
  else if (key == "lr_model") as_double(cfg.lr_model);
  else if (key == "lr_offset") as_double(cfg.lr_offset);
  else if (key == "strategy") cfg.strategy = value;
  else if (key == "mode") cfg.mode = value;
  else if (key == "dh_threshold") as_double(cfg.dh_threshold);
  else if (key == "dense_width") { int v; as_int(v); cfg.dense_width = static_cast<std::size_t>(v); }
  else if (key == "agg_lr") as_double(cfg.agg_lr);
  else if (key == "agg_steps") as_int(cfg.agg_steps);
  else if (key == "agg_hidden") as_int(cfg.agg_hidden);
  else if (key == "agg_warm_start") as_bool(cfg.agg_warm_start);
  else if (key == "seed") { int v; as_int(v); cfg.seed = static_cast<std::uint64_t>(v); }
  else if (key == "outdir") cfg.outdir = value;
  else if (key == "workers") as_int(cfg.workers);
  else if (key == "step_log") as_bool(cfg.step_log);
  else if (key == "negative_eval") as_bool(cfg.negative_eval);
  else if (key == "reject_margin") as_double(cfg.reject_margin);
  else if (key == "hidden") {
    cfg.hidden.clear();
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        cfg.hidden.push_back(static_cast<std::size_t>(std::stoul(item)));
      } catch (...) {
        throw ConfigError("config: bad hidden list '" + value + "'");
      }
    }
    if (cfg.hidden.empty()) throw ConfigError("config: empty hidden list");
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

inline ExperimentConfig load_config_file(const std::string& path,
                                         ExperimentConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: missing '=' at " + path + ":" + std::to_string(line_no));
    apply_config_entry(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

// --- run records -------------------------------------------------------------

struct ClientRoundStat {
  double train_loss = 0.0;
  double test_acc = 0.0;
  std::size_t bytes_up = 0;
  std::size_t bytes_down = 0;
};

struct RoundRecord {
  int round = 0;
  double dh = 0.0;
  std::string strategy;  // resolved for this round
  std::vector<ClientRoundStat> clients;
  double mean_train_loss = 0.0;
  double mean_test_acc = 0.0;
  // aggregator regression losses; NaN when no training happened this round
  double agg_loss_initial = std::numeric_limits<double>::quiet_NaN();
  double agg_loss_final = std::numeric_limits<double>::quiet_NaN();
};

struct ExperimentResult {
  std::vector<RoundRecord> records;
  ModelParams final_model;
  std::vector<Offset> final_offsets;
  Partition partition;
  double dh = 0.0;

  double final_accuracy() const {
    return records.empty() ? 0.0 : records.back().mean_test_acc;
  }
};

namespace detail {

inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  std::size_t pool_size = workers <= 0 ? std::thread::hardware_concurrency()
                                       : static_cast<std::size_t>(workers);
  pool_size = std::min(std::max<std::size_t>(pool_size, 1), n);
  if (pool_size <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  std::vector<std::thread> pool;
  pool.reserve(pool_size);
  for (std::size_t t = 0; t < pool_size; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace detail

// --- frozen partitions -------------------------------------------------------

/// Self-contained partition file: the blobs/split recipe plus the realized
/// index lists, so a run can be replayed against the exact same layout.
inline void save_partition_json(const std::string& path, const ExperimentConfig& cfg,
                                const Partition& partition, double dh) {
  nlohmann::json j;
  j["dataset"] = {{"classes", cfg.classes},     {"per_class", cfg.per_class},
                  {"dim", cfg.dim},             {"spread", cfg.spread},
                  {"data_seed", mix_seed(cfg.seed, 1)},
                  {"split_fraction", cfg.split_fraction},
                  {"split_seed", mix_seed(cfg.seed, 2)}};
  j["num_clients"] = partition.num_clients();
  j["classes_per_client"] = cfg.classes_per_client;
  j["dh"] = dh;
  j["class_count_matrix"] = partition.class_count_matrix;
  for (std::size_t i = 0; i < partition.num_clients(); ++i)
    j["clients"].push_back({{"id", i}, {"indices", partition.assignments[i]}});
  std::ofstream out(path);
  if (!out) throw ConfigError("partition: cannot write " + path);
  out << j.dump(2) << "\n";
}

struct FrozenPartition {
  LabeledDataset train;
  LabeledDataset test;
  Partition partition;
};

inline FrozenPartition load_partition_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("partition: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError("partition: bad JSON in " + path + ": " + e.what());
  }
  const auto& d = j.at("dataset");
  LabeledDataset blobs =
      make_blobs(d.at("classes").get<int>(), d.at("per_class").get<int>(),
                 d.at("dim").get<int>(), d.at("spread").get<double>(),
                 d.at("data_seed").get<std::uint64_t>());
  SplitResult split = train_test_split(blobs, d.at("split_fraction").get<double>(),
                                       d.at("split_seed").get<std::uint64_t>());
  FrozenPartition out;
  out.train = std::move(split.train);
  out.test = std::move(split.test);
  out.partition.class_count_matrix =
      j.at("class_count_matrix").get<std::vector<std::vector<std::size_t>>>();
  out.partition.assignments.resize(j.at("num_clients").get<std::size_t>());
  for (const auto& c : j.at("clients"))
    out.partition.assignments.at(c.at("id").get<std::size_t>()) =
        c.at("indices").get<std::vector<std::size_t>>();

  // The stored index lists must describe the regenerated train split.
  std::size_t total = 0;
  for (const auto& list : out.partition.assignments) {
    for (std::size_t idx : list)
      if (idx >= out.train.size())
        throw ConfigError("partition: index out of range for the regenerated split");
    total += list.size();
  }
  if (total != out.train.size())
    throw ConfigError("partition: index lists do not cover the train split");
  return out;
}

// --- communication overhead ---------------------------------------------------

struct OverheadReport {
  std::size_t weight_bytes = 0;  // the model as configured (dual by default)
  std::size_t offset_bytes = 0;
  double delta_percent = 0.0;  // offset + dual-channel extra, vs single-channel
};

/// Byte accounting in the wire format. The single-channel baseline shares the
/// backbone and differs only in the dense layer's input width.
inline OverheadReport communication_overhead(const ModelParams& params, const Offset& offset) {
  OverheadReport report;
  report.weight_bytes = model_bytes(params);
  report.offset_bytes = serialized_size(offset.t.shape);

  std::size_t single_bytes = 0;
  params.for_each_tensor([&](const std::string& name, const Tensor& t) {
    std::vector<std::size_t> shape = t.shape;
    if (params.channels == 2 && name == "dense.weight") shape[0] /= 2;
    single_bytes += serialized_size(shape);
  });
  const std::size_t extra_weight = report.weight_bytes - single_bytes;
  report.delta_percent = 100.0 *
                         static_cast<double>(report.offset_bytes + extra_weight) /
                         static_cast<double>(single_bytes);
  return report;
}

// --- the round loop ----------------------------------------------------------

namespace detail {

struct EvalSet {
  Tensor inputs;
  std::vector<int> labels;  // label == num_classes means "reject expected"
};

inline EvalSet client_eval_set(const LabeledDataset& test, const Partition& partition,
                               std::size_t client, const ExperimentConfig& cfg) {
  std::vector<bool> holds(test.num_classes, false);
  for (int j = 0; j < test.num_classes; ++j)
    holds[j] = partition.class_count_matrix[client][j] > 0;

  std::vector<std::size_t> own, others;
  for (std::size_t i = 0; i < test.size(); ++i)
    (holds[test.labels[i]] ? own : others).push_back(i);
  if (own.empty())
    throw std::runtime_error("evaluate: no test samples for client " + std::to_string(client));

  std::vector<std::size_t> chosen = own;
  std::vector<int> labels;
  labels.reserve(own.size());
  for (std::size_t idx : own) labels.push_back(test.labels[idx]);

  if (cfg.negative_eval && !others.empty()) {
    // Equal count of other-class samples, expected to be rejected.
    std::mt19937_64 rng(mix_seed(cfg.seed, 200 + client));
    std::uniform_int_distribution<std::size_t> pick(0, others.size() - 1);
    for (std::size_t k = 0; k < own.size(); ++k) {
      chosen.push_back(others[pick(rng)]);
      labels.push_back(test.num_classes);
    }
  }

  EvalSet out;
  out.inputs = Tensor({chosen.size(), test.dim()});
  for (std::size_t r = 0; r < chosen.size(); ++r)
    for (std::size_t j = 0; j < test.dim(); ++j)
      out.inputs.at(r, j) = test.inputs.at(chosen[r], j);
  out.labels = std::move(labels);
  return out;
}

/// Softmax-confidence argmax with a reject option: predictions whose top
/// probability stays within `margin` of the uniform level 1/K map to the
/// reject label K.
inline int predict_with_reject(const Tensor& logits, std::size_t row, double margin) {
  const std::size_t k = logits.cols();
  double mx = logits.at(row, 0);
  for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits.at(row, j));
  double sum = 0.0;
  for (std::size_t j = 0; j < k; ++j) sum += std::exp(logits.at(row, j) - mx);
  int best = argmax_row(logits, row);
  const double top = std::exp(logits.at(row, best) - mx) / sum;
  if (top < 1.0 / static_cast<double>(k) + margin) return static_cast<int>(k);
  return best;
}

inline double evaluate_client(const ClientState& state, const ModelParams& model, Alpha alpha,
                              const EvalSet& eval, const ExperimentConfig& cfg) {
  if (!cfg.negative_eval)
    return evaluate_local(state, model, alpha, eval.inputs, eval.labels);
  Tensor logits = predict_logits(model, eval.inputs, state.offset, alpha);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < eval.labels.size(); ++i)
    if (predict_with_reject(logits, i, cfg.reject_margin) == eval.labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(eval.labels.size());
}

}  // namespace detail

/// Runs the full R-round protocol: dispatch the global model and per-client
/// offsets, train every client locally (optionally on a worker pool), average
/// the models, resolve and apply the offset strategy, evaluate each client on
/// its class-restricted test split. Deterministic per seed, independent of
/// the worker count.
inline ExperimentResult run_experiment(const ExperimentConfig& raw_cfg) {
  raw_cfg.validate();
  const ExperimentConfig cfg = raw_cfg.normalized();
  const RunMode mode = *parse_mode(cfg.mode);
  const OffsetStrategy requested = *parse_strategy(cfg.strategy);
  const Alpha alpha(cfg.alpha);

  // Data and partition.
  LabeledDataset train, test;
  Partition partition;
  if (!cfg.partition_path.empty()) {
    FrozenPartition frozen = load_partition_json(cfg.partition_path);
    train = std::move(frozen.train);
    test = std::move(frozen.test);
    partition = std::move(frozen.partition);
  } else {
    LabeledDataset blobs =
        make_blobs(cfg.classes, cfg.per_class, cfg.dim, cfg.spread, mix_seed(cfg.seed, 1));
    SplitResult split = train_test_split(blobs, cfg.split_fraction, mix_seed(cfg.seed, 2));
    train = std::move(split.train);
    test = std::move(split.test);
    partition =
        partition_dataset(train, cfg.clients, cfg.classes_per_client, mix_seed(cfg.seed, 3));
  }
  const std::size_t num_clients = partition.num_clients();
  const double dh = distributional_heterogeneity(partition);

  std::vector<ClassEmbedding> embeddings;
  embeddings.reserve(num_clients);
  for (std::size_t i = 0; i < num_clients; ++i)
    embeddings.push_back(class_embedding(partition, static_cast<int>(i)));

  // Clients and their evaluation sets.
  std::vector<ClientState> states;
  states.reserve(num_clients);
  std::vector<detail::EvalSet> eval_sets;
  eval_sets.reserve(num_clients);
  for (std::size_t i = 0; i < num_clients; ++i) {
    LabeledDataset local = train.subset(partition.assignments[i]);
    states.emplace_back(static_cast<int>(i), std::move(local.inputs), std::move(local.labels),
                        mix_seed(cfg.seed, 100 + i));
    eval_sets.push_back(detail::client_eval_set(test, partition, i, cfg));
  }

  const int channels = mode == RunMode::kSingleChannel ? 1 : 2;
  ModelParams global = init_model(train.dim(), cfg.hidden, cfg.dense_width,
                                  static_cast<std::size_t>(train.num_classes), channels,
                                  mix_seed(cfg.seed, 4));
  std::vector<Offset> offsets(num_clients, Offset::zeros(train.dim()));
  std::vector<Offset> prev_returned;  // last round's aggregated outputs (nn strategy)
  std::optional<OffsetAggregatorNet> aggregator;

  SgdConfig sgd;
  sgd.learning_rate_model = cfg.lr_model;
  sgd.learning_rate_offset = cfg.lr_offset;
  sgd.batch_size = static_cast<std::size_t>(cfg.batch);

  const std::size_t offset_payload = serialized_size({train.dim()});

  // Metrics sinks.
  std::ofstream metrics_csv, server_csv, steps_csv;
  if (!cfg.outdir.empty()) {
    std::filesystem::create_directories(cfg.outdir);
    metrics_csv.open(cfg.outdir + "/metrics.csv");
    server_csv.open(cfg.outdir + "/server.csv");
    if (!metrics_csv || !server_csv)
      throw std::runtime_error("run: cannot write metrics under " + cfg.outdir);
    metrics_csv << "round,client,train_loss,test_acc,dh,strategy,bytes_up,bytes_down\n";
    server_csv << "round,dh,strategy,aggregator_loss_initial,aggregator_loss_final\n";
    if (cfg.step_log) {
      steps_csv.open(cfg.outdir + "/steps.csv");
      steps_csv << "round,client,batch,loss\n";
    }
  }

  ExperimentResult result;
  result.partition = partition;
  result.dh = dh;

  for (int round = 0; round < cfg.rounds; ++round) {
    std::vector<LocalRoundResult> locals(num_clients);
    std::vector<std::vector<StepEvent>> step_logs(num_clients);
    detail::parallel_for(num_clients, cfg.workers, [&](std::size_t i) {
      try {
        locals[i] = local_round(states[i], global, offsets[i], sgd, cfg.epochs, alpha,
                                cfg.step_log ? &step_logs[i] : nullptr);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error(std::string(e.what()) + " (round " + std::to_string(round) +
                                 ")");
      }
    });

    std::vector<ModelParams> models;
    models.reserve(num_clients);
    for (auto& lr : locals) models.push_back(lr.model);
    const std::size_t up_model_bytes = model_bytes(models.front());
    global = aggregate_models(models);

    const OffsetStrategy resolved = select_strategy(dh, cfg.dh_threshold, requested);
    RoundRecord record;
    record.round = round;
    record.dh = dh;
    record.strategy = strategy_name(resolved);

    std::vector<Offset> uploaded;
    uploaded.reserve(num_clients);
    for (auto& lr : locals) uploaded.push_back(lr.offset);

    switch (resolved) {
      case OffsetStrategy::kNone:
        offsets = uploaded;
        break;
      case OffsetStrategy::kAverage: {
        Offset mean = aggregate_offsets_average(uploaded);
        offsets.assign(num_clients, mean);
        break;
      }
      case OffsetStrategy::kNn: {
        if (!aggregator || !cfg.agg_warm_start)
          aggregator.emplace(train.dim(), static_cast<std::size_t>(train.num_classes),
                             static_cast<std::size_t>(cfg.agg_hidden), mix_seed(cfg.seed, 5));
        if (!prev_returned.empty()) {
          std::vector<OffsetAggregatorNet::Pair> pairs;
          pairs.reserve(num_clients);
          for (std::size_t i = 0; i < num_clients; ++i)
            pairs.push_back({embeddings[i], uploaded[i].t, prev_returned[i].t});
          auto report = aggregator->train(pairs, cfg.agg_lr, cfg.agg_steps);
          record.agg_loss_initial = report.initial_loss;
          record.agg_loss_final = report.final_loss;
        }
        offsets = aggregate_offsets_nn(*aggregator, embeddings, uploaded);
        prev_returned = offsets;
        break;
      }
      case OffsetStrategy::kAuto:
        throw std::logic_error("strategy auto must resolve before application");
    }

    const std::size_t down_bytes = model_bytes(global) + offset_payload;
    double loss_sum = 0.0, acc_sum = 0.0;
    record.clients.resize(num_clients);
    for (std::size_t i = 0; i < num_clients; ++i) {
      states[i].offset = offsets[i];
      ClientRoundStat& stat = record.clients[i];
      stat.train_loss = locals[i].mean_train_loss;
      stat.test_acc = detail::evaluate_client(states[i], global, alpha, eval_sets[i], cfg);
      stat.bytes_up = up_model_bytes + offset_payload;
      stat.bytes_down = down_bytes;
      loss_sum += stat.train_loss;
      acc_sum += stat.test_acc;
    }
    record.mean_train_loss = loss_sum / static_cast<double>(num_clients);
    record.mean_test_acc = acc_sum / static_cast<double>(num_clients);

    if (metrics_csv.is_open()) {
      std::size_t up_total = 0, down_total = 0;
      for (std::size_t i = 0; i < num_clients; ++i) {
        const ClientRoundStat& s = record.clients[i];
        metrics_csv << round << ',' << i << ',' << detail::fmt_double(s.train_loss) << ','
                    << detail::fmt_double(s.test_acc) << ',' << detail::fmt_double(dh) << ','
                    << record.strategy << ',' << s.bytes_up << ',' << s.bytes_down << '\n';
        up_total += s.bytes_up;
        down_total += s.bytes_down;
      }
      metrics_csv << round << ",-1," << detail::fmt_double(record.mean_train_loss) << ','
                  << detail::fmt_double(record.mean_test_acc) << ','
                  << detail::fmt_double(dh) << ',' << record.strategy << ',' << up_total << ','
                  << down_total << '\n';
      server_csv << round << ',' << detail::fmt_double(dh) << ',' << record.strategy << ',';
      if (std::isnan(record.agg_loss_initial))
        server_csv << ",";
      else
        server_csv << detail::fmt_double(record.agg_loss_initial) << ','
                   << detail::fmt_double(record.agg_loss_final);
      server_csv << '\n';
      if (steps_csv.is_open())
        for (std::size_t i = 0; i < num_clients; ++i)
          for (const StepEvent& ev : step_logs[i])
            if (ev.kind == 'm')
              steps_csv << round << ',' << i << ',' << ev.batch << ','
                        << detail::fmt_double(ev.loss) << '\n';
    }
    result.records.push_back(std::move(record));
  }

  result.final_model = global;
  result.final_offsets = offsets;
  if (!cfg.outdir.empty())
    save_checkpoint(cfg.outdir + "/checkpoint", result.final_model, result.final_offsets,
                    alpha);
  return result;
}

// --- sweeps -------------------------------------------------------------------

enum class SweepAxis { kAlpha, kEpochs, kStrategy, kChannels };

inline std::optional<SweepAxis> parse_axis(const std::string& s) {
  if (s == "alpha") return SweepAxis::kAlpha;
  if (s == "epochs") return SweepAxis::kEpochs;
  if (s == "strategy") return SweepAxis::kStrategy;
  if (s == "channels") return SweepAxis::kChannels;
  return std::nullopt;
}

struct SweepRow {
  std::string value;
  double final_accuracy = 0.0;
};

/// Reruns the base config once per axis value (shared seed) and reports the
/// final global accuracy for each.
inline std::vector<SweepRow> ablation_sweep(const ExperimentConfig& base, SweepAxis axis,
                                            const std::vector<std::string>& values) {
  if (values.empty()) throw ConfigError("sweep: need at least one value");
  std::vector<SweepRow> rows;
  for (const std::string& value : values) {
    ExperimentConfig cfg = base;
    cfg.outdir.clear();  // per-run CSVs are not part of a sweep
    switch (axis) {
      case SweepAxis::kAlpha:
        try {
          cfg.alpha = std::stod(value);
        } catch (...) {
          throw ConfigError("sweep: bad alpha '" + value + "'");
        }
        break;
      case SweepAxis::kEpochs:
        try {
          cfg.epochs = std::stoi(value);
        } catch (...) {
          throw ConfigError("sweep: bad epochs '" + value + "'");
        }
        break;
      case SweepAxis::kStrategy:
        cfg.strategy = value;
        break;
      case SweepAxis::kChannels:
        if (value == "single")
          cfg.mode = "single_channel";
        else if (value == "double")
          cfg.mode = "distrans";
        else
          throw ConfigError("sweep: channels value must be single or double");
        break;
    }
    rows.push_back({value, run_experiment(cfg).final_accuracy()});
  }
  if (!base.outdir.empty()) {
    std::filesystem::create_directories(base.outdir);
    std::ofstream out(base.outdir + "/sweep.csv");
    out << "axis,value,final_accuracy\n";
    const char* axis_names[] = {"alpha", "epochs", "strategy", "channels"};
    for (const SweepRow& row : rows)
      out << axis_names[static_cast<int>(axis)] << ',' << row.value << ','
          << detail::fmt_double(row.final_accuracy) << '\n';
  }
  return rows;
}

}  // namespace fedsim
