#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "fedsim/common.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

struct LabeledDataset {
  Tensor inputs;            // [n × d]
  std::vector<int> labels;  // class ids in [0, num_classes)
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return inputs.cols(); }

  Tensor row(std::size_t i) const {
    Tensor out({dim()});
    for (std::size_t j = 0; j < dim(); ++j) out.data[j] = inputs.at(i, j);
    return out;
  }

  /// Gathers rows by index into a new dataset with the same class space.
  LabeledDataset subset(const std::vector<std::size_t>& indices) const {
    LabeledDataset out;
    out.num_classes = num_classes;
    out.inputs = Tensor({indices.size(), dim()});
    out.labels.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
      for (std::size_t j = 0; j < dim(); ++j) out.inputs.at(r, j) = inputs.at(indices[r], j);
      out.labels.push_back(labels[indices[r]]);
    }
    return out;
  }
};

/// Isotropic Gaussian blobs around deterministic lattice centers. Centers sit
/// on a grid with spacing 5*spread, so any two are at least 4*spread apart
/// and a nearest-centroid rule is already a strong classifier.
inline LabeledDataset make_blobs(int num_classes, int per_class, int dim, double spread,
                                 std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("make_blobs: need at least 2 classes");
  if (per_class < 1) throw ConfigError("make_blobs: per_class must be >= 1");
  if (dim < 1) throw ConfigError("make_blobs: dim must be >= 1");
  if (!(spread > 0.0)) throw ConfigError("make_blobs: spread must be > 0");

  // Smallest base m with m^dim >= num_classes; class j's center has the
  // base-m digits of j as coordinates, scaled by the lattice spacing.
  int base = 2;
  while (std::pow(static_cast<double>(base), dim) < static_cast<double>(num_classes)) ++base;
  const double spacing = 5.0 * spread;

  const std::size_t n = static_cast<std::size_t>(num_classes) * per_class;
  LabeledDataset ds;
  ds.num_classes = num_classes;
  ds.inputs = Tensor({n, static_cast<std::size_t>(dim)});
  ds.labels.resize(n);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::size_t row = 0;
  for (int c = 0; c < num_classes; ++c) {
    std::vector<double> center(dim, 0.0);
    int digits = c;
    for (int j = 0; j < dim && digits > 0; ++j) {
      center[j] = spacing * (digits % base);
      digits /= base;
    }
    for (int s = 0; s < per_class; ++s, ++row) {
      for (int j = 0; j < dim; ++j)
        ds.inputs.at(row, j) = center[j] + spread * noise(rng);
      ds.labels[row] = c;
    }
  }
  return ds;
}

/// Client-side view of a dataset split: disjoint index lists plus the derived
/// class-count matrix (clients × classes).
struct Partition {
  std::vector<std::vector<std::size_t>> assignments;
  std::vector<std::vector<std::size_t>> class_count_matrix;

  std::size_t num_clients() const { return class_count_matrix.size(); }
  std::size_t num_classes() const {
    return class_count_matrix.empty() ? 0 : class_count_matrix.front().size();
  }
};

/// Label-skewed split: each client is assigned `classes_per_client` classes
/// by dealing cyclic windows over one seeded class shuffle (every class gets
/// a holder when C*u >= N), then each class's samples are divided among its
/// holders proportionally to draws s ~ U(0.4, 0.6) normalized per class.
/// Rounding residue goes to the holder with the largest draw.
inline Partition partition_dataset(const LabeledDataset& ds, int num_clients,
                                   int classes_per_client, std::uint64_t seed) {
  const int n_classes = ds.num_classes;
  if (num_clients < 1) throw ConfigError("partition: need at least one client");
  if (classes_per_client < 1 || classes_per_client > n_classes)
    throw ConfigError("partition: classes_per_client must lie in [1, num_classes]");
  if (static_cast<long long>(num_clients) * classes_per_client < n_classes)
    throw ConfigError("partition: clients*classes_per_client < num_classes leaves classes unheld");

  std::mt19937_64 rng(seed);
  std::vector<int> class_order(n_classes);
  std::iota(class_order.begin(), class_order.end(), 0);
  std::shuffle(class_order.begin(), class_order.end(), rng);

  std::vector<std::vector<bool>> holds(num_clients, std::vector<bool>(n_classes, false));
  for (int i = 0; i < num_clients; ++i)
    for (int k = 0; k < classes_per_client; ++k) {
      int c = class_order[(static_cast<std::size_t>(i) * classes_per_client + k) % n_classes];
      holds[i][c] = true;
    }

  std::vector<std::vector<std::size_t>> by_class(n_classes);
  for (std::size_t idx = 0; idx < ds.size(); ++idx) by_class[ds.labels[idx]].push_back(idx);

  Partition p;
  p.assignments.assign(num_clients, {});
  p.class_count_matrix.assign(num_clients, std::vector<std::size_t>(n_classes, 0));

  std::uniform_real_distribution<double> share_draw(0.4, 0.6);
  for (int c = 0; c < n_classes; ++c) {
    if (by_class[c].empty()) throw ConfigError("partition: class without samples");
    std::vector<int> holders;
    for (int i = 0; i < num_clients; ++i)
      if (holds[i][c]) holders.push_back(i);

    std::vector<double> draws(holders.size());
    double total = 0.0;
    for (double& s : draws) {
      s = share_draw(rng);
      total += s;
    }
    const std::size_t n_c = by_class[c].size();
    std::vector<std::size_t> counts(holders.size());
    std::size_t given = 0;
    std::size_t largest = 0;
    for (std::size_t h = 0; h < holders.size(); ++h) {
      counts[h] = static_cast<std::size_t>(std::floor(draws[h] / total * n_c));
      given += counts[h];
      if (draws[h] > draws[largest]) largest = h;
    }
    counts[largest] += n_c - given;

    std::shuffle(by_class[c].begin(), by_class[c].end(), rng);
    std::size_t cursor = 0;
    for (std::size_t h = 0; h < holders.size(); ++h) {
      for (std::size_t k = 0; k < counts[h]; ++k, ++cursor)
        p.assignments[holders[h]].push_back(by_class[c][cursor]);
      p.class_count_matrix[holders[h]][c] = counts[h];
    }
  }
  for (auto& list : p.assignments) std::sort(list.begin(), list.end());
  return p;
}

/// Heterogeneity of a class-count matrix: a class held by exactly one client
/// contributes 0, a class held by k > 1 clients contributes k; the sum is
/// normalized against the all-overlapping case. 0 = fully i.i.d. layout,
/// 1 = every class on exactly one client.
inline double dh_from_counts(const std::vector<std::vector<std::size_t>>& counts) {
  if (counts.empty() || counts.front().empty())
    throw std::invalid_argument("dh: empty class-count matrix");
  const std::size_t clients = counts.size(), classes = counts.front().size();
  double sum = 0.0;
  for (std::size_t j = 0; j < classes; ++j) {
    std::size_t k = 0;
    for (std::size_t i = 0; i < clients; ++i)
      if (counts[i][j] > 0) ++k;
    if (k == 0) throw std::invalid_argument("dh: class " + std::to_string(j) + " held by no client");
    sum += (k == 1) ? 0.0 : static_cast<double>(k);
  }
  return 1.0 - sum / (static_cast<double>(classes) * static_cast<double>(clients));
}

inline double distributional_heterogeneity(const Partition& p) {
  return dh_from_counts(p.class_count_matrix);
}

/// Length-N vector whose j-th entry is the fraction of class-j samples that
/// live on the given client.
struct ClassEmbedding {
  std::vector<double> e;
};

inline ClassEmbedding class_embedding(const Partition& p, int client) {
  if (client < 0 || static_cast<std::size_t>(client) >= p.num_clients())
    throw std::invalid_argument("class_embedding: bad client index");
  ClassEmbedding emb;
  emb.e.resize(p.num_classes(), 0.0);
  for (std::size_t j = 0; j < p.num_classes(); ++j) {
    std::size_t total = 0;
    for (std::size_t i = 0; i < p.num_clients(); ++i) total += p.class_count_matrix[i][j];
    if (total > 0)
      emb.e[j] = static_cast<double>(p.class_count_matrix[client][j]) /
                 static_cast<double>(total);
  }
  return emb;
}

struct SplitResult {
  LabeledDataset train;
  LabeledDataset test;
  std::vector<std::size_t> train_indices;  // into the original dataset
  std::vector<std::size_t> test_indices;
};

/// Stratified split: every class divided independently with both sides kept
/// nonempty. `fraction` is the training share.
inline SplitResult train_test_split(const LabeledDataset& ds, double fraction,
                                    std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw ConfigError("train_test_split: fraction must lie in (0,1)");
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);

  std::mt19937_64 rng(seed);
  SplitResult out;
  for (int c = 0; c < ds.num_classes; ++c) {
    auto& idx = by_class[c];
    if (idx.size() < 2)
      throw ConfigError("train_test_split: class " + std::to_string(c) +
                        " too small to split");
    std::shuffle(idx.begin(), idx.end(), rng);
    auto want = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    const std::size_t n_train = std::clamp<std::size_t>(want, 1, idx.size() - 1);
    out.train_indices.insert(out.train_indices.end(), idx.begin(), idx.begin() + n_train);
    out.test_indices.insert(out.test_indices.end(), idx.begin() + n_train, idx.end());
  }
  std::sort(out.train_indices.begin(), out.train_indices.end());
  std::sort(out.test_indices.begin(), out.test_indices.end());
  out.train = ds.subset(out.train_indices);
  out.test = ds.subset(out.test_indices);
  return out;
}

}  // namespace fedsim
