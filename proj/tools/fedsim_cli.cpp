// fedsim command-line front end.
//
// Subcommands:
//   partition  write a frozen partition JSON and print its heterogeneity
//   train      run one federated experiment, emit metrics CSVs + checkpoint
//   sweep      rerun a base config along one ablation axis
//   motivate   emit the two toy-problem CSV bundles
//   overhead   report wire-format byte counts for a model/offset pair
//
// Flags mirror config-file keys; --config loads the file first and explicit
// flags override it. Exit codes: 0 ok, 2 configuration error, 1 runtime abort.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedsim/harness.hpp"
#include "fedsim/toy.hpp"

namespace {

struct CliOptions {
  std::string config_path;
  fedsim::ExperimentConfig cfg;
  std::string hidden_spec;
};

// Flags write into `pending`; after parsing, entries for flags the user
// actually passed are applied on top of the config file.
void add_config_flags(CLI::App* cmd, fedsim::ExperimentConfig& cfg, std::string& hidden_spec) {
  cmd->add_option("--classes", cfg.classes, "number of blob classes");
  cmd->add_option("--per-class", cfg.per_class, "samples per class");
  cmd->add_option("--dim", cfg.dim, "input dimension");
  cmd->add_option("--spread", cfg.spread, "blob standard deviation");
  cmd->add_option("--split-fraction", cfg.split_fraction, "train share of the split");
  cmd->add_option("--partition", cfg.partition_path, "frozen partition JSON path");
  cmd->add_option("--clients", cfg.clients, "number of clients");
  cmd->add_option("--classes-per-client", cfg.classes_per_client, "classes held per client");
  cmd->add_option("--rounds", cfg.rounds, "federated rounds");
  cmd->add_option("--epochs", cfg.epochs, "local epochs per round");
  cmd->add_option("--batch", cfg.batch, "minibatch size");
  cmd->add_option("--alpha", cfg.alpha, "channel mixing coefficient");
  cmd->add_option("--lr-model", cfg.lr_model, "model learning rate");
  cmd->add_option("--lr-offset", cfg.lr_offset, "offset learning rate");
  cmd->add_option("--strategy", cfg.strategy, "offset aggregation: auto|none|average|nn");
  cmd->add_option("--mode", cfg.mode, "distrans|fedavg|single_channel");
  cmd->add_option("--dh-threshold", cfg.dh_threshold, "auto-strategy threshold");
  cmd->add_option("--hidden", hidden_spec, "backbone widths, e.g. 64,32");
  cmd->add_option("--dense-width", cfg.dense_width, "dense layer width");
  cmd->add_option("--agg-lr", cfg.agg_lr, "offset aggregator learning rate");
  cmd->add_option("--agg-steps", cfg.agg_steps, "offset aggregator SGD steps per round");
  cmd->add_option("--agg-hidden", cfg.agg_hidden, "offset aggregator hidden width");
  cmd->add_option("--agg-warm-start", cfg.agg_warm_start,
                  "keep the aggregator across rounds");
  cmd->add_option("--seed", cfg.seed, "experiment seed");
  cmd->add_option("--outdir", cfg.outdir, "output directory");
  cmd->add_option("--workers", cfg.workers, "client worker threads (0 = hardware)");
  cmd->add_option("--step-log", cfg.step_log, "write per-batch losses to steps.csv");
  cmd->add_option("--negative-eval", cfg.negative_eval,
                  "augment test sets with reject-labeled negatives");
  cmd->add_option("--reject-margin", cfg.reject_margin, "confidence margin for reject");
}

// Build the effective config: file first, then every flag the user passed.
fedsim::ExperimentConfig resolve_config(CLI::App* cmd, const std::string& config_path,
                                        const fedsim::ExperimentConfig& flag_values,
                                        const std::string& hidden_spec) {
  fedsim::ExperimentConfig cfg;
  if (!config_path.empty()) cfg = fedsim::load_config_file(config_path);

  auto passed = [&](const std::string& name) { return cmd->count(name) > 0; };
  if (passed("--classes")) cfg.classes = flag_values.classes;
  if (passed("--per-class")) cfg.per_class = flag_values.per_class;
  if (passed("--dim")) cfg.dim = flag_values.dim;
  if (passed("--spread")) cfg.spread = flag_values.spread;
  if (passed("--split-fraction")) cfg.split_fraction = flag_values.split_fraction;
  if (passed("--partition")) cfg.partition_path = flag_values.partition_path;
  if (passed("--clients")) cfg.clients = flag_values.clients;
  if (passed("--classes-per-client"))
    cfg.classes_per_client = flag_values.classes_per_client;
  if (passed("--rounds")) cfg.rounds = flag_values.rounds;
  if (passed("--epochs")) cfg.epochs = flag_values.epochs;
  if (passed("--batch")) cfg.batch = flag_values.batch;
  if (passed("--alpha")) cfg.alpha = flag_values.alpha;
  if (passed("--lr-model")) cfg.lr_model = flag_values.lr_model;
  if (passed("--lr-offset")) cfg.lr_offset = flag_values.lr_offset;
  if (passed("--strategy")) cfg.strategy = flag_values.strategy;
  if (passed("--mode")) cfg.mode = flag_values.mode;
  if (passed("--dh-threshold")) cfg.dh_threshold = flag_values.dh_threshold;
  if (passed("--hidden")) fedsim::apply_config_entry(cfg, "hidden", hidden_spec);
  if (passed("--dense-width")) cfg.dense_width = flag_values.dense_width;
  if (passed("--agg-lr")) cfg.agg_lr = flag_values.agg_lr;
  if (passed("--agg-steps")) cfg.agg_steps = flag_values.agg_steps;
  if (passed("--agg-hidden")) cfg.agg_hidden = flag_values.agg_hidden;
  if (passed("--agg-warm-start")) cfg.agg_warm_start = flag_values.agg_warm_start;
  if (passed("--seed")) cfg.seed = flag_values.seed;
  if (passed("--outdir")) cfg.outdir = flag_values.outdir;
  if (passed("--workers")) cfg.workers = flag_values.workers;
  if (passed("--step-log")) cfg.step_log = flag_values.step_log;
  if (passed("--negative-eval")) cfg.negative_eval = flag_values.negative_eval;
  if (passed("--reject-margin")) cfg.reject_margin = flag_values.reject_margin;
  return cfg;
}

int cmd_partition(const fedsim::ExperimentConfig& cfg, const std::string& out_path) {
  cfg.validate();
  fedsim::LabeledDataset blobs = fedsim::make_blobs(
      cfg.classes, cfg.per_class, cfg.dim, cfg.spread, fedsim::mix_seed(cfg.seed, 1));
  auto split =
      fedsim::train_test_split(blobs, cfg.split_fraction, fedsim::mix_seed(cfg.seed, 2));
  auto partition = fedsim::partition_dataset(split.train, cfg.clients, cfg.classes_per_client,
                                             fedsim::mix_seed(cfg.seed, 3));
  const double dh = fedsim::distributional_heterogeneity(partition);
  fedsim::save_partition_json(out_path, cfg, partition, dh);
  std::printf("partition: %d clients, %d classes, dh=%.6f -> %s\n", cfg.clients, cfg.classes,
              dh, out_path.c_str());
  return 0;
}

int cmd_train(const fedsim::ExperimentConfig& cfg) {
  auto result = fedsim::run_experiment(cfg);
  std::printf("dh=%.6f rounds=%zu final_accuracy=%.6f final_mean_loss=%.6f\n", result.dh,
              result.records.size(), result.final_accuracy(),
              result.records.back().mean_train_loss);
  if (!cfg.outdir.empty())
    std::printf("wrote %s/metrics.csv, server.csv, checkpoint.{json,bin}\n",
                cfg.outdir.c_str());
  return 0;
}

int cmd_sweep(const fedsim::ExperimentConfig& cfg, const std::string& axis_name,
              const std::string& values_spec) {
  auto axis = fedsim::parse_axis(axis_name);
  if (!axis) throw fedsim::ConfigError("sweep: unknown axis '" + axis_name + "'");
  std::vector<std::string> values;
  std::stringstream ss(values_spec);
  std::string item;
  while (std::getline(ss, item, ',')) values.push_back(item);
  auto rows = fedsim::ablation_sweep(cfg, *axis, values);
  for (const auto& row : rows)
    std::printf("%s=%s final_accuracy=%.6f\n", axis_name.c_str(), row.value.c_str(),
                row.final_accuracy);
  return 0;
}

int cmd_motivate(const std::string& outdir) {
  namespace toy = fedsim::toy;
  std::filesystem::create_directories(outdir);

  // Cosine task: loss curves per client, with and without the searched q.
  toy::ToyClientSpec c1{{1.0}, 0.05, 160, 7};
  toy::ToyClientSpec c2{{1.5}, 0.05, 160, 8};
  const double p = 0.1;
  auto w_grid = toy::default_w_grid();
  auto best = toy::brute_force_q(c1, c2, p, toy::default_q_grid(), w_grid);

  auto write_curves = [&](const std::string& path, std::optional<toy::LinearOffsetSpec> o1,
                          std::optional<toy::LinearOffsetSpec> o2) {
    auto curve1 = toy::cosine_loss_curve(c1, o1, w_grid);
    auto curve2 = toy::cosine_loss_curve(c2, o2, w_grid);
    std::ofstream out(path);
    out << "w,loss_client1,loss_client2\n";
    for (std::size_t i = 0; i < curve1.size(); ++i) {
      char buf[96];
      std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%.10g\n", curve1[i].first,
                    curve1[i].second, curve2[i].second);
      out << buf;
    }
    return fedsim::toy::curve_discrepancy(curve1, curve2);
  };
  const double d_raw = write_curves(outdir + "/cosine_raw.csv",
                                    toy::LinearOffsetSpec{p, 0.0},
                                    toy::LinearOffsetSpec{p, 0.0});
  const double d_best = write_curves(outdir + "/cosine_offset.csv",
                                     toy::LinearOffsetSpec{p, best.q1},
                                     toy::LinearOffsetSpec{p, best.q2});

  // Federated linear regression: loss trajectory with and without offsets.
  toy::ToyClientSpec l1{{1.0, 2.0}, 0.05, 2, 12};
  toy::ToyClientSpec l2{{3.0, 1.0}, 0.05, 2, 13};
  auto write_traj = [&](const std::string& path, bool with_offsets) {
    auto run = toy::federated_linear_regression(l1, l2, with_offsets, 2000, 0.01, 1);
    std::ofstream out(path);
    out << "round,loss\n";
    for (std::size_t r = 0; r < run.round_losses.size(); ++r) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%zu,%.10g\n", r, run.round_losses[r]);
      out << buf;
    }
    return run.round_losses.back();
  };
  const double loss_with = write_traj(outdir + "/fedlin_with_offsets.csv", true);
  const double loss_without = write_traj(outdir + "/fedlin_without_offsets.csv", false);

  std::printf("cosine: q=(%.2f, %.2f) discrepancy %.4f -> %.4f (x%.3f)\n", best.q1, best.q2,
              d_raw, d_best, d_best / d_raw);
  std::printf("fedlin: final loss with=%.3e without=%.3e (x%.3e)\n", loss_with, loss_without,
              loss_with / loss_without);
  std::printf("wrote 4 CSV files under %s\n", outdir.c_str());
  return 0;
}

int cmd_overhead(const std::string& offset_shape_spec, const std::string& hidden_spec,
                 int dense_width, int classes) {
  std::vector<std::size_t> offset_shape;
  {
    std::stringstream ss(offset_shape_spec);
    std::string item;
    while (std::getline(ss, item, ','))
      offset_shape.push_back(static_cast<std::size_t>(std::stoul(item)));
    if (offset_shape.empty()) throw fedsim::ConfigError("overhead: empty offset shape");
  }
  std::vector<std::size_t> hidden;
  {
    std::stringstream ss(hidden_spec);
    std::string item;
    while (std::getline(ss, item, ','))
      hidden.push_back(static_cast<std::size_t>(std::stoul(item)));
    if (hidden.empty()) throw fedsim::ConfigError("overhead: empty hidden list");
  }
  std::size_t input_dim = 1;
  for (std::size_t d : offset_shape) input_dim *= d;
  fedsim::ModelParams model = fedsim::init_model(
      input_dim, hidden, static_cast<std::size_t>(dense_width),
      static_cast<std::size_t>(classes), 2, 1);
  auto report =
      fedsim::communication_overhead(model, fedsim::Offset{fedsim::Tensor(offset_shape)});
  std::printf("weight_bytes=%zu offset_bytes=%zu delta_percent=%.4f\n", report.weight_bytes,
              report.offset_bytes, report.delta_percent);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deterministic federated-learning simulator with per-client input offsets"};
  app.require_subcommand(1);

  CliOptions opts;
  std::string partition_out = "partition.json";
  std::string sweep_axis, sweep_values;
  std::string motivate_outdir = "motivate_out";
  std::string offset_shape = "64,64,3";
  std::string overhead_hidden = "64,32";
  int overhead_dense = 32, overhead_classes = 8;

  CLI::App* partition = app.add_subcommand("partition", "emit a frozen partition JSON + DH");
  partition->add_option("--config", opts.config_path, "config file");
  partition->add_option("--out", partition_out, "output JSON path");

  CLI::App* train = app.add_subcommand("train", "run one federated experiment");
  train->add_option("--config", opts.config_path, "config file");

  CLI::App* sweep = app.add_subcommand("sweep", "ablation sweep over one axis");
  sweep->add_option("--config", opts.config_path, "config file");
  sweep->add_option("--axis", sweep_axis, "alpha|epochs|strategy|channels")->required();
  sweep->add_option("--values", sweep_values, "comma-separated values")->required();

  CLI::App* motivate = app.add_subcommand("motivate", "emit the toy-problem CSVs");
  motivate->add_option("--outdir", motivate_outdir, "output directory");

  CLI::App* overhead = app.add_subcommand("overhead", "wire-format byte accounting");
  overhead->add_option("--offset-shape", offset_shape, "offset dims, e.g. 64,64,3");
  overhead->add_option("--hidden", overhead_hidden, "backbone widths");
  overhead->add_option("--dense-width", overhead_dense, "dense layer width");
  overhead->add_option("--classes", overhead_classes, "logit count");

  for (CLI::App* cmd : {partition, train, sweep})
    add_config_flags(cmd, opts.cfg, opts.hidden_spec);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (partition->parsed()) {
      auto cfg = resolve_config(partition, opts.config_path, opts.cfg, opts.hidden_spec);
      return cmd_partition(cfg, partition_out);
    }
    if (train->parsed()) {
      auto cfg = resolve_config(train, opts.config_path, opts.cfg, opts.hidden_spec);
      return cmd_train(cfg);
    }
    if (sweep->parsed()) {
      auto cfg = resolve_config(sweep, opts.config_path, opts.cfg, opts.hidden_spec);
      return cmd_sweep(cfg, sweep_axis, sweep_values);
    }
    if (motivate->parsed()) return cmd_motivate(motivate_outdir);
    if (overhead->parsed())
      return cmd_overhead(offset_shape, overhead_hidden, overhead_dense, overhead_classes);
  } catch (const fedsim::ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime error: %s\n", e.what());
    return 1;
  }
  return 0;
}
