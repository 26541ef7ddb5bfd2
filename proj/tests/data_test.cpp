#include "fedsim/data.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

using fedsim::LabeledDataset;
using fedsim::Partition;

namespace {

// Independent nearest-centroid classifier used as the separability oracle.
double nearest_centroid_accuracy(const LabeledDataset& ds) {
  std::vector<std::vector<double>> centroids(ds.num_classes,
                                             std::vector<double>(ds.dim(), 0.0));
  std::vector<std::size_t> counts(ds.num_classes, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < ds.dim(); ++j)
      centroids[ds.labels[i]][j] += ds.inputs.at(i, j);
    ++counts[ds.labels[i]];
  }
  for (int c = 0; c < ds.num_classes; ++c)
    for (double& v : centroids[c]) v /= static_cast<double>(counts[c]);

  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int c = 0; c < ds.num_classes; ++c) {
      double d = 0.0;
      for (std::size_t j = 0; j < ds.dim(); ++j) {
        double diff = ds.inputs.at(i, j) - centroids[c][j];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    if (best == ds.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

}  // namespace

TEST(MakeBlobs, MinimalDataset) {
  LabeledDataset ds = fedsim::make_blobs(2, 1, 3, 0.5, 42);
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.labels, (std::vector<int>{0, 1}));
}

TEST(MakeBlobs, DeterministicPerSeed) {
  LabeledDataset a = fedsim::make_blobs(4, 10, 5, 0.7, 9);
  LabeledDataset b = fedsim::make_blobs(4, 10, 5, 0.7, 9);
  EXPECT_EQ(a.inputs.data, b.inputs.data);
  LabeledDataset c = fedsim::make_blobs(4, 10, 5, 0.7, 10);
  EXPECT_NE(a.inputs.data, c.inputs.data);
}

TEST(MakeBlobs, NearestCentroidSeparability) {
  LabeledDataset ds = fedsim::make_blobs(8, 100, 16, 0.5, 1);
  EXPECT_GE(nearest_centroid_accuracy(ds), 0.95);
}

TEST(MakeBlobs, CentersRespectMinimumSpacing) {
  // Exact class means sit on the lattice; verify pairwise distance >= 4*spread
  // on empirical centroids of a low-noise draw.
  const double spread = 0.01;
  LabeledDataset ds = fedsim::make_blobs(5, 200, 3, spread, 7);
  std::vector<std::vector<double>> centroid(5, std::vector<double>(3, 0.0));
  std::vector<std::size_t> n(5, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < 3; ++j) centroid[ds.labels[i]][j] += ds.inputs.at(i, j);
    ++n[ds.labels[i]];
  }
  for (int c = 0; c < 5; ++c)
    for (double& v : centroid[c]) v /= static_cast<double>(n[c]);
  for (int a = 0; a < 5; ++a)
    for (int b = a + 1; b < 5; ++b) {
      double d = 0.0;
      for (int j = 0; j < 3; ++j) {
        double diff = centroid[a][j] - centroid[b][j];
        d += diff * diff;
      }
      EXPECT_GE(std::sqrt(d), 4.0 * spread);
    }
}

TEST(MakeBlobs, RejectsBadArguments) {
  EXPECT_THROW(fedsim::make_blobs(1, 5, 3, 0.5, 1), fedsim::ConfigError);
  EXPECT_THROW(fedsim::make_blobs(3, 0, 3, 0.5, 1), fedsim::ConfigError);
  EXPECT_THROW(fedsim::make_blobs(3, 5, 3, 0.0, 1), fedsim::ConfigError);
}

TEST(PartitionDataset, SingleClassClientsAreDisjoint) {
  LabeledDataset ds = fedsim::make_blobs(4, 10, 4, 0.5, 3);
  Partition p = fedsim::partition_dataset(ds, 4, 1, 5);
  // Every client holds exactly one class worth of samples.
  for (int i = 0; i < 4; ++i) {
    std::size_t held_classes = 0;
    for (int j = 0; j < 4; ++j)
      if (p.class_count_matrix[i][j] > 0) ++held_classes;
    EXPECT_EQ(held_classes, 1u);
    EXPECT_EQ(p.assignments[i].size(), 10u);
  }
  EXPECT_DOUBLE_EQ(fedsim::distributional_heterogeneity(p), 1.0);
}

TEST(PartitionDataset, TwoClientConservation) {
  LabeledDataset ds = fedsim::make_blobs(2, 10, 3, 0.5, 4);
  Partition p = fedsim::partition_dataset(ds, 2, 1, 6);
  EXPECT_EQ(p.assignments[0].size() + p.assignments[1].size(), 20u);
  // Each class lands entirely on one client.
  for (int j = 0; j < 2; ++j) {
    std::size_t holders = 0;
    for (int i = 0; i < 2; ++i)
      if (p.class_count_matrix[i][j] > 0) ++holders;
    EXPECT_EQ(holders, 1u);
  }
}

TEST(PartitionDataset, IndexListsPartitionTheDataset) {
  LabeledDataset ds = fedsim::make_blobs(5, 30, 4, 0.5, 8);
  Partition p = fedsim::partition_dataset(ds, 3, 3, 11);
  std::set<std::size_t> seen;
  std::size_t total = 0;
  for (const auto& list : p.assignments) {
    for (std::size_t idx : list) {
      EXPECT_TRUE(seen.insert(idx).second) << "index assigned twice";
      ++total;
    }
  }
  EXPECT_EQ(total, ds.size());

  // Count matrix row/column sums agree with the assignments.
  for (std::size_t i = 0; i < p.num_clients(); ++i) {
    std::size_t row_sum = std::accumulate(p.class_count_matrix[i].begin(),
                                          p.class_count_matrix[i].end(), std::size_t{0});
    EXPECT_EQ(row_sum, p.assignments[i].size());
  }
  for (int j = 0; j < ds.num_classes; ++j) {
    std::size_t col = 0;
    for (std::size_t i = 0; i < p.num_clients(); ++i) col += p.class_count_matrix[i][j];
    EXPECT_EQ(col, 30u);
  }
}

// With u = N every client holds every class and each realized share respects
// the bounds implied by s ~ U(0.4, 0.6), up to the +-1-sample rounding rule.
TEST(PartitionDataset, AllClassesShareBoundsOverManySeeds) {
  const int clients = 5;
  LabeledDataset ds = fedsim::make_blobs(3, 200, 3, 0.5, 12);
  const double lo = 0.4 / (0.6 * clients);
  const double hi = 0.6 / (0.4 * clients);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Partition p = fedsim::partition_dataset(ds, clients, 3, seed);
    for (int i = 0; i < clients; ++i)
      for (int j = 0; j < 3; ++j) {
        double share = static_cast<double>(p.class_count_matrix[i][j]) / 200.0;
        EXPECT_GE(share, lo) << "seed " << seed;
        EXPECT_LE(share, hi) << "seed " << seed;
      }
  }
}

TEST(PartitionDataset, DeterministicPerSeedAndCoverageAlways) {
  LabeledDataset ds = fedsim::make_blobs(6, 20, 4, 0.5, 13);
  Partition a = fedsim::partition_dataset(ds, 4, 2, 21);
  Partition b = fedsim::partition_dataset(ds, 4, 2, 21);
  EXPECT_EQ(a.assignments, b.assignments);
  for (std::uint64_t seed = 100; seed < 140; ++seed) {
    Partition p = fedsim::partition_dataset(ds, 4, 2, seed);
    for (int j = 0; j < 6; ++j) {
      std::size_t holders = 0;
      for (int i = 0; i < 4; ++i)
        if (p.class_count_matrix[i][j] > 0) ++holders;
      EXPECT_GE(holders, 1u) << "class uncovered at seed " << seed;
    }
    // Each client holds exactly u classes.
    for (int i = 0; i < 4; ++i) {
      std::size_t held = 0;
      for (int j = 0; j < 6; ++j)
        if (p.class_count_matrix[i][j] > 0) ++held;
      EXPECT_EQ(held, 2u);
    }
  }
}

TEST(PartitionDataset, InfeasibleConfigThrows) {
  LabeledDataset ds = fedsim::make_blobs(6, 5, 4, 0.5, 14);
  EXPECT_THROW(fedsim::partition_dataset(ds, 2, 2, 1), fedsim::ConfigError);  // 2*2 < 6
  EXPECT_THROW(fedsim::partition_dataset(ds, 2, 7, 1), fedsim::ConfigError);  // u > N
  EXPECT_THROW(fedsim::partition_dataset(ds, 0, 2, 1), fedsim::ConfigError);
}

TEST(Heterogeneity, HandFixtures) {
  // Everybody holds everything -> 0.
  EXPECT_DOUBLE_EQ(fedsim::dh_from_counts({{5, 5, 5}, {5, 5, 5}, {1, 2, 3}}), 0.0);
  // Disjoint single holders -> 1.
  EXPECT_DOUBLE_EQ(fedsim::dh_from_counts({{5, 0}, {0, 5}}), 1.0);
  // N=4, C=2, classes 0 and 1 shared, 2 only on client 0, 3 only on client 1:
  // c = [2,2,0,0], DH = 1 - 4/8.
  EXPECT_DOUBLE_EQ(fedsim::dh_from_counts({{3, 4, 6, 0}, {3, 4, 0, 6}}), 0.5);
}

TEST(Heterogeneity, UnheldClassThrows) {
  EXPECT_THROW(fedsim::dh_from_counts({{1, 0}, {2, 0}}), std::invalid_argument);
}

TEST(Heterogeneity, RangeAndRelabelInvarianceOnRandomPartitions) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<int> classes_d(2, 7), clients_d(1, 6);
    int n_classes = classes_d(rng);
    int n_clients = clients_d(rng);
    // Random counts with guaranteed coverage: give each class one random holder
    // first, then sprinkle.
    std::vector<std::vector<std::size_t>> counts(n_clients,
                                                 std::vector<std::size_t>(n_classes, 0));
    std::uniform_int_distribution<int> client_d(0, n_clients - 1);
    std::uniform_int_distribution<int> extra_d(0, 3);
    for (int j = 0; j < n_classes; ++j) counts[client_d(rng)][j] = 1 + extra_d(rng);
    for (int i = 0; i < n_clients; ++i)
      for (int j = 0; j < n_classes; ++j)
        if (extra_d(rng) == 0) counts[i][j] += extra_d(rng);

    double dh = fedsim::dh_from_counts(counts);
    EXPECT_GE(dh, 0.0);
    EXPECT_LE(dh, 1.0);

    // Relabel clients (reverse rows) and classes (reverse columns).
    std::vector<std::vector<std::size_t>> relabeled(counts.rbegin(), counts.rend());
    for (auto& row : relabeled) std::reverse(row.begin(), row.end());
    EXPECT_DOUBLE_EQ(fedsim::dh_from_counts(relabeled), dh);
  }
}

TEST(ClassEmbedding, HandCases) {
  // Single client holds everything -> all ones.
  fedsim::Partition p;
  p.class_count_matrix = {{4, 9, 1}};
  p.assignments = {{}};
  auto e = fedsim::class_embedding(p, 0);
  EXPECT_EQ(e.e, (std::vector<double>{1.0, 1.0, 1.0}));

  // The DH=0.5 fixture: client 0 with an exact 50/50 split of shared classes.
  fedsim::Partition q;
  q.class_count_matrix = {{3, 4, 6, 0}, {3, 4, 0, 6}};
  q.assignments = {{}, {}};
  auto e0 = fedsim::class_embedding(q, 0);
  EXPECT_EQ(e0.e, (std::vector<double>{0.5, 0.5, 1.0, 0.0}));
}

TEST(ClassEmbedding, ColumnsSumToOneAcrossClients) {
  LabeledDataset ds = fedsim::make_blobs(5, 40, 4, 0.5, 17);
  Partition p = fedsim::partition_dataset(ds, 4, 3, 23);
  for (int j = 0; j < 5; ++j) {
    double total = 0.0;
    for (int i = 0; i < 4; ++i) total += fedsim::class_embedding(p, i).e[j];
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(TrainTestSplit, EvenSplitPerClass) {
  LabeledDataset ds = fedsim::make_blobs(3, 10, 4, 0.5, 19);
  auto split = fedsim::train_test_split(ds, 0.5, 2);
  std::vector<int> train_counts(3, 0), test_counts(3, 0);
  for (int y : split.train.labels) ++train_counts[y];
  for (int y : split.test.labels) ++test_counts[y];
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(train_counts[c], 5);
    EXPECT_EQ(test_counts[c], 5);
  }
}

TEST(TrainTestSplit, IndexSetAlgebra) {
  LabeledDataset ds = fedsim::make_blobs(4, 9, 3, 0.5, 20);
  auto split = fedsim::train_test_split(ds, 0.7, 3);
  std::set<std::size_t> all(split.train_indices.begin(), split.train_indices.end());
  for (std::size_t idx : split.test_indices)
    EXPECT_TRUE(all.insert(idx).second) << "index in both sides";
  EXPECT_EQ(all.size(), ds.size());
}

TEST(TrainTestSplit, SeedChangesSelectionNotCounts) {
  LabeledDataset ds = fedsim::make_blobs(3, 12, 3, 0.5, 21);
  auto a = fedsim::train_test_split(ds, 0.5, 4);
  auto b = fedsim::train_test_split(ds, 0.5, 5);
  EXPECT_NE(a.train_indices, b.train_indices);
  EXPECT_EQ(a.train.size(), b.train.size());
}

TEST(TrainTestSplit, TooSmallClassThrows) {
  LabeledDataset ds = fedsim::make_blobs(2, 1, 3, 0.5, 22);
  EXPECT_THROW(fedsim::train_test_split(ds, 0.5, 1), fedsim::ConfigError);
  LabeledDataset ok = fedsim::make_blobs(2, 4, 3, 0.5, 22);
  EXPECT_THROW(fedsim::train_test_split(ok, 0.0, 1), fedsim::ConfigError);
  EXPECT_THROW(fedsim::train_test_split(ok, 1.0, 1), fedsim::ConfigError);
}
