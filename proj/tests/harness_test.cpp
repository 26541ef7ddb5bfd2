#include "fedsim/harness.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;
using fedsim::ExperimentConfig;
using fedsim::Tensor;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.classes = 2;
  cfg.per_class = 10;
  cfg.dim = 4;
  cfg.spread = 1.0;
  cfg.clients = 2;
  cfg.classes_per_client = 1;
  cfg.rounds = 3;
  cfg.epochs = 1;
  cfg.batch = 4;
  cfg.hidden = {6, 4};
  cfg.dense_width = 4;
  cfg.seed = 5;
  return cfg;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(Config, FileParsingWithCommentsAndOverrides) {
  TempDir dir("fedsim_cfg_test");
  const fs::path cfg_path = dir.path / "exp.cfg";
  std::ofstream out(cfg_path);
  out << "# experiment\n"
      << "classes = 4\n"
      << "rounds = 7   # trailing comment\n"
      << "alpha = 0.2\n"
      << "hidden = 16,8\n"
      << "strategy = average\n"
      << "agg_warm_start = false\n";
  out.close();

  ExperimentConfig cfg = fedsim::load_config_file(cfg_path.string());
  EXPECT_EQ(cfg.classes, 4);
  EXPECT_EQ(cfg.rounds, 7);
  EXPECT_DOUBLE_EQ(cfg.alpha, 0.2);
  EXPECT_EQ(cfg.hidden, (std::vector<std::size_t>{16, 8}));
  EXPECT_EQ(cfg.strategy, "average");
  EXPECT_FALSE(cfg.agg_warm_start);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  ExperimentConfig cfg;
  EXPECT_THROW(fedsim::apply_config_entry(cfg, "no_such_key", "1"), fedsim::ConfigError);
  EXPECT_THROW(fedsim::apply_config_entry(cfg, "rounds", "many"), fedsim::ConfigError);
  EXPECT_THROW(fedsim::apply_config_entry(cfg, "step_log", "maybe"), fedsim::ConfigError);
  EXPECT_THROW(fedsim::load_config_file("/nonexistent/path.cfg"), fedsim::ConfigError);
}

TEST(Config, ValidationCatchesBadSettings) {
  ExperimentConfig cfg = tiny_config();
  cfg.rounds = 0;
  EXPECT_THROW(fedsim::run_experiment(cfg), fedsim::ConfigError);
  cfg = tiny_config();
  cfg.mode = "pfedme";
  EXPECT_THROW(cfg.validate(), fedsim::ConfigError);
  cfg = tiny_config();
  cfg.alpha = 1.5;
  EXPECT_THROW(cfg.validate(), fedsim::ConfigError);
  cfg = tiny_config();
  cfg.strategy = "median";
  EXPECT_THROW(cfg.validate(), fedsim::ConfigError);
}

TEST(Config, FedavgModeNormalization) {
  ExperimentConfig cfg = tiny_config();
  cfg.mode = "fedavg";
  cfg.alpha = 0.3;
  ExperimentConfig norm = cfg.normalized();
  EXPECT_DOUBLE_EQ(norm.alpha, 0.0);
  EXPECT_EQ(norm.strategy, "none");
  EXPECT_DOUBLE_EQ(norm.lr_offset, 0.0);
}

TEST(RunExperiment, SingleClientMeansItsOwnLocalResult) {
  ExperimentConfig cfg = tiny_config();
  cfg.clients = 1;
  cfg.classes_per_client = 2;  // coverage needs u = N for one client
  cfg.rounds = 1;
  cfg.strategy = "none";
  auto result = fedsim::run_experiment(cfg);

  // Replicate the single client's round by hand from the same seeds.
  fedsim::LabeledDataset blobs = fedsim::make_blobs(
      cfg.classes, cfg.per_class, cfg.dim, cfg.spread, fedsim::mix_seed(cfg.seed, 1));
  auto split = fedsim::train_test_split(blobs, cfg.split_fraction, fedsim::mix_seed(cfg.seed, 2));
  auto partition = fedsim::partition_dataset(split.train, 1, 2, fedsim::mix_seed(cfg.seed, 3));
  fedsim::LabeledDataset local = split.train.subset(partition.assignments[0]);
  fedsim::ClientState state(0, local.inputs, local.labels, fedsim::mix_seed(cfg.seed, 100));
  fedsim::ModelParams model =
      fedsim::init_model(split.train.dim(), cfg.hidden, cfg.dense_width, 2, 2,
                         fedsim::mix_seed(cfg.seed, 4));
  fedsim::SgdConfig sgd;
  sgd.learning_rate_model = cfg.lr_model;
  sgd.learning_rate_offset = cfg.lr_offset;
  sgd.batch_size = static_cast<std::size_t>(cfg.batch);
  auto local_result = fedsim::local_round(state, model, fedsim::Offset::zeros(split.train.dim()),
                                          sgd, cfg.epochs, fedsim::Alpha(cfg.alpha));

  std::vector<double> got, want;
  result.final_model.for_each_tensor([&](const std::string&, const Tensor& t) {
    got.insert(got.end(), t.data.begin(), t.data.end());
  });
  local_result.model.for_each_tensor([&](const std::string&, const Tensor& t) {
    want.insert(want.end(), t.data.begin(), t.data.end());
  });
  EXPECT_EQ(got, want);
  EXPECT_EQ(result.final_offsets[0].t.data, local_result.offset.t.data);
}

TEST(RunExperiment, FedavgEqualsDistransAtAlphaZero) {
  ExperimentConfig a = tiny_config();
  a.mode = "distrans";
  a.alpha = 0.0;
  ExperimentConfig b = tiny_config();
  b.mode = "fedavg";
  auto ra = fedsim::run_experiment(a);
  auto rb = fedsim::run_experiment(b);
  ASSERT_EQ(ra.records.size(), rb.records.size());
  for (std::size_t r = 0; r < ra.records.size(); ++r) {
    EXPECT_EQ(ra.records[r].mean_test_acc, rb.records[r].mean_test_acc);
    EXPECT_EQ(ra.records[r].mean_train_loss, rb.records[r].mean_train_loss);
  }
}

TEST(RunExperiment, ProtocolConservationAndByteAccounting) {
  ExperimentConfig cfg = tiny_config();
  auto result = fedsim::run_experiment(cfg);
  ASSERT_EQ(result.records.size(), 3u);
  const std::size_t model_bytes = fedsim::model_bytes(result.final_model);
  const std::size_t offset_bytes = fedsim::serialized_size({4});
  for (const auto& record : result.records) {
    EXPECT_EQ(record.clients.size(), 2u);  // every round touches every client
    for (const auto& stat : record.clients) {
      EXPECT_EQ(stat.bytes_down, model_bytes + offset_bytes);
      EXPECT_EQ(stat.bytes_up, model_bytes + offset_bytes);
      EXPECT_GE(stat.test_acc, 0.0);
      EXPECT_LE(stat.test_acc, 1.0);
    }
  }
}

TEST(RunExperiment, MetricsCsvBytesIdenticalAcrossWorkerCounts) {
  TempDir d1("fedsim_run_w1"), d2("fedsim_run_w4");
  ExperimentConfig cfg = tiny_config();
  cfg.rounds = 4;
  cfg.strategy = "nn";  // exercise the aggregator path too
  cfg.agg_steps = 20;
  cfg.outdir = d1.path.string();
  cfg.workers = 1;
  fedsim::run_experiment(cfg);
  cfg.outdir = d2.path.string();
  cfg.workers = 4;
  fedsim::run_experiment(cfg);

  EXPECT_EQ(read_file(d1.path / "metrics.csv"), read_file(d2.path / "metrics.csv"));
  EXPECT_EQ(read_file(d1.path / "server.csv"), read_file(d2.path / "server.csv"));
  EXPECT_FALSE(read_file(d1.path / "metrics.csv").empty());

  const std::string header = read_file(d1.path / "metrics.csv").substr(0, 62);
  EXPECT_EQ(header.rfind("round,client,train_loss,test_acc,dh,strategy,bytes_up", 0), 0u);
}

TEST(RunExperiment, StepLogWritesModelStepLosses) {
  TempDir dir("fedsim_steps");
  ExperimentConfig cfg = tiny_config();
  cfg.rounds = 1;
  cfg.step_log = true;
  cfg.outdir = dir.path.string();
  fedsim::run_experiment(cfg);
  std::string steps = read_file(dir.path / "steps.csv");
  EXPECT_EQ(steps.rfind("round,client,batch,loss", 0), 0u);
  // 2 clients, 10 train samples each (80% of 10 per class, u=1 -> 8), batch 4.
  EXPECT_GT(std::count(steps.begin(), steps.end(), '\n'), 2);
}

TEST(RunExperiment, NnStrategyTrainsAggregatorFromRoundOne) {
  ExperimentConfig cfg = tiny_config();
  cfg.strategy = "nn";
  cfg.rounds = 3;
  cfg.agg_steps = 10;
  auto result = fedsim::run_experiment(cfg);
  EXPECT_TRUE(std::isnan(result.records[0].agg_loss_initial));  // no pairs yet
  EXPECT_FALSE(std::isnan(result.records[1].agg_loss_initial));
  EXPECT_FALSE(std::isnan(result.records[2].agg_loss_final));
}

TEST(PartitionJson, SaveLoadRoundTrip) {
  TempDir dir("fedsim_part");
  ExperimentConfig cfg = tiny_config();
  fedsim::LabeledDataset blobs = fedsim::make_blobs(
      cfg.classes, cfg.per_class, cfg.dim, cfg.spread, fedsim::mix_seed(cfg.seed, 1));
  auto split = fedsim::train_test_split(blobs, cfg.split_fraction, fedsim::mix_seed(cfg.seed, 2));
  auto partition = fedsim::partition_dataset(split.train, cfg.clients, cfg.classes_per_client,
                                             fedsim::mix_seed(cfg.seed, 3));
  const double dh = fedsim::distributional_heterogeneity(partition);
  const std::string path = (dir.path / "partition.json").string();
  fedsim::save_partition_json(path, cfg, partition, dh);

  auto frozen = fedsim::load_partition_json(path);
  EXPECT_EQ(frozen.partition.assignments, partition.assignments);
  EXPECT_EQ(frozen.partition.class_count_matrix, partition.class_count_matrix);
  EXPECT_EQ(frozen.train.size(), split.train.size());

  // A run against the frozen partition reproduces the direct run exactly.
  ExperimentConfig direct = cfg;
  auto r1 = fedsim::run_experiment(direct);
  ExperimentConfig via = cfg;
  via.partition_path = path;
  auto r2 = fedsim::run_experiment(via);
  ASSERT_EQ(r1.records.size(), r2.records.size());
  for (std::size_t i = 0; i < r1.records.size(); ++i)
    EXPECT_EQ(r1.records[i].mean_test_acc, r2.records[i].mean_test_acc);
}

TEST(PartitionJson, LoadRejectsCorruptFiles) {
  TempDir dir("fedsim_part_bad");
  const std::string path = (dir.path / "bad.json").string();
  std::ofstream(path) << "{ not json";
  EXPECT_THROW(fedsim::load_partition_json(path), fedsim::ConfigError);
  EXPECT_THROW(fedsim::load_partition_json("/missing.json"), fedsim::ConfigError);
}

TEST(Overhead, OffsetPayloadMatchesReportedTable) {
  fedsim::Offset offset{Tensor({64, 64, 3})};
  fedsim::ModelParams model = fedsim::init_model(64 * 64 * 3, {64, 32}, 32, 8, 2, 1);
  auto report = fedsim::communication_overhead(model, offset);
  EXPECT_EQ(report.offset_bytes, 4u + 12u + 64u * 64u * 3u * 4u);  // 49,168
  EXPECT_NEAR(static_cast<double>(report.offset_bytes), 49280.0, 256.0);
  EXPECT_LT(report.delta_percent, 2.0);
  EXPECT_GT(report.delta_percent, 0.0);
}

TEST(Overhead, AccountingIdentity) {
  // weight_bytes decomposes into per-tensor header + payload; the headers are
  // all that remains when payloads are excluded.
  fedsim::ModelParams model = fedsim::init_model(6, {4}, 3, 2, 2, 3);
  std::size_t expect = 0, headers = 0, payload = 0;
  model.for_each_tensor([&](const std::string&, const Tensor& t) {
    expect += fedsim::serialized_size(t.shape);
    headers += 4 + 4 * t.rank();
    payload += 4 * t.numel();
  });
  auto report = fedsim::communication_overhead(model, fedsim::Offset::zeros(6));
  EXPECT_EQ(report.weight_bytes, expect);
  EXPECT_EQ(report.weight_bytes, headers + payload);
}

TEST(Overhead, SingleChannelModelHasNoWeightDelta) {
  fedsim::ModelParams model = fedsim::init_model(8, {6}, 4, 3, 1, 5);
  auto report = fedsim::communication_overhead(model, fedsim::Offset::zeros(8));
  const double offset_only = 100.0 * static_cast<double>(report.offset_bytes) /
                             static_cast<double>(report.weight_bytes);
  EXPECT_DOUBLE_EQ(report.delta_percent, offset_only);
}

TEST(Sweep, AlphaZeroMatchesFedavg) {
  ExperimentConfig base = tiny_config();
  auto rows = fedsim::ablation_sweep(base, fedsim::SweepAxis::kAlpha, {"0.0"});
  ExperimentConfig fedavg = tiny_config();
  fedavg.mode = "fedavg";
  auto reference = fedsim::run_experiment(fedavg);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].final_accuracy, reference.final_accuracy());
}

TEST(Sweep, WritesCsvAndValidatesAxis) {
  TempDir dir("fedsim_sweep");
  ExperimentConfig base = tiny_config();
  base.rounds = 1;
  base.outdir = dir.path.string();
  auto rows = fedsim::ablation_sweep(base, fedsim::SweepAxis::kStrategy, {"none", "average"});
  EXPECT_EQ(rows.size(), 2u);
  std::string csv = read_file(dir.path / "sweep.csv");
  EXPECT_EQ(csv.rfind("axis,value,final_accuracy", 0), 0u);
  EXPECT_NE(csv.find("strategy,none,"), std::string::npos);
  EXPECT_THROW(fedsim::ablation_sweep(base, fedsim::SweepAxis::kChannels, {"triple"}),
               fedsim::ConfigError);
  EXPECT_THROW(fedsim::ablation_sweep(base, fedsim::SweepAxis::kAlpha, {}),
               fedsim::ConfigError);
}

TEST(RejectRule, UniformConfidenceMapsToRejectLabel) {
  Tensor uniform({1, 4}, {0.5, 0.5, 0.5, 0.5});
  EXPECT_EQ(fedsim::detail::predict_with_reject(uniform, 0, 0.05), 4);
  Tensor confident({1, 4}, {8.0, 0.0, 0.0, 0.0});
  EXPECT_EQ(fedsim::detail::predict_with_reject(confident, 0, 0.05), 0);
}

TEST(RejectRule, NegativeEvalRunsEndToEnd) {
  ExperimentConfig cfg = tiny_config();
  cfg.negative_eval = true;
  cfg.rounds = 2;
  auto result = fedsim::run_experiment(cfg);
  for (const auto& record : result.records)
    for (const auto& stat : record.clients) {
      EXPECT_GE(stat.test_acc, 0.0);
      EXPECT_LE(stat.test_acc, 1.0);
    }
}

TEST(CheckpointIo, RoundTripAtWirePrecision) {
  TempDir dir("fedsim_ckpt");
  fedsim::ModelParams model = fedsim::init_model(5, {4, 3}, 4, 2, 2, 9);
  std::vector<fedsim::Offset> offsets = {fedsim::Offset{Tensor({5}, {1, 2, 3, 4, 5})},
                                         fedsim::Offset{Tensor({5}, {-1, 0, 1, 0.5, -0.25})}};
  const std::string base = (dir.path / "checkpoint").string();
  fedsim::save_checkpoint(base, model, offsets, fedsim::Alpha(0.3));
  fedsim::Checkpoint ck = fedsim::load_checkpoint(base);
  EXPECT_DOUBLE_EQ(ck.alpha, 0.3);
  EXPECT_EQ(ck.model.channels, 2);
  ASSERT_EQ(ck.offsets.size(), 2u);
  EXPECT_EQ(ck.offsets[1].t.data[3], 0.5);

  std::vector<const Tensor*> got, want;
  ck.model.for_each_tensor([&](const std::string&, const Tensor& t) { got.push_back(&t); });
  model.for_each_tensor([&](const std::string&, const Tensor& t) { want.push_back(&t); });
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    ASSERT_EQ(got[i]->shape, want[i]->shape);
    for (std::size_t j = 0; j < got[i]->data.size(); ++j)
      EXPECT_EQ(got[i]->data[j],
                static_cast<double>(static_cast<float>(want[i]->data[j])));
  }
}
