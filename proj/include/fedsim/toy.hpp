#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "fedsim/common.hpp"

namespace fedsim::toy {

/// One synthetic client for the two motivating problems. `w_true` is a
/// single coefficient for the cosine task and a 2-vector for the linear one.
struct ToyClientSpec {
  std::vector<double> w_true;
  double noise_std = 0.0;
  int n = 2;
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 2) throw std::invalid_argument("toy spec: need n >= 2 samples");
    if (noise_std < 0.0) throw std::invalid_argument("toy spec: noise_std must be >= 0");
    if (w_true.empty()) throw std::invalid_argument("toy spec: w_true empty");
  }
};

/// Input shift x~ = x + (p*x + q); p is shared across clients, q is the
/// per-client knob (searched for the cosine task, learned for the linear one).
struct LinearOffsetSpec {
  double p = 0.1;
  double q = 0.0;
};

struct ScalarData {
  std::vector<double> x;
  std::vector<double> y;
};

inline ScalarData make_cosine_data(const ToyClientSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ScalarData d;
  d.x.resize(spec.n);
  d.y.resize(spec.n);
  for (int i = 0; i < spec.n; ++i) {
    d.x[i] = gauss(rng);
    d.y[i] = std::cos(spec.w_true[0] * d.x[i]) + spec.noise_std * gauss(rng);
  }
  return d;
}

/// Mean squared error of cos(w * x~) along a weight grid. With no offset the
/// raw inputs are used.
inline std::vector<std::pair<double, double>> cosine_loss_curve(
    const ToyClientSpec& spec, const std::optional<LinearOffsetSpec>& offset,
    const std::vector<double>& w_grid) {
  if (w_grid.empty()) throw std::invalid_argument("cosine_loss_curve: empty w grid");
  ScalarData d = make_cosine_data(spec);
  std::vector<double> shifted = d.x;
  if (offset)
    for (double& v : shifted) v = v + offset->p * v + offset->q;

  std::vector<std::pair<double, double>> curve;
  curve.reserve(w_grid.size());
  for (double w : w_grid) {
    double loss = 0.0;
    for (std::size_t i = 0; i < shifted.size(); ++i) {
      double r = std::cos(w * shifted[i]) - d.y[i];
      loss += r * r;
    }
    curve.emplace_back(w, loss / static_cast<double>(shifted.size()));
  }
  return curve;
}

/// Sum of squared pointwise differences between two loss curves on the same
/// weight grid.
inline double curve_discrepancy(const std::vector<std::pair<double, double>>& a,
                                const std::vector<std::pair<double, double>>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("curve_discrepancy: grid mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i].second - b[i].second;
    total += d * d;
  }
  return total;
}

inline std::vector<double> default_w_grid() {
  std::vector<double> grid;
  for (int i = -100; i <= 100; ++i) grid.push_back(0.05 * i);
  return grid;
}

inline std::vector<double> default_q_grid() {
  std::vector<double> grid;
  for (int i = -60; i <= 60; ++i) grid.push_back(0.05 * i);
  return grid;
}

struct BruteForceResult {
  double q1 = 0.0;
  double q2 = 0.0;
  double discrepancy = 0.0;
};

/// Exhaustive search over the q grid (one q per client) for the pair that
/// makes the two clients' loss curves most alike.
inline BruteForceResult brute_force_q(const ToyClientSpec& spec1, const ToyClientSpec& spec2,
                                      double p, const std::vector<double>& q_grid,
                                      const std::vector<double>& w_grid = default_w_grid()) {
  if (q_grid.empty()) throw std::invalid_argument("brute_force_q: empty q grid");
  std::vector<std::vector<std::pair<double, double>>> curves1, curves2;
  curves1.reserve(q_grid.size());
  curves2.reserve(q_grid.size());
  for (double q : q_grid) {
    LinearOffsetSpec off{p, q};
    curves1.push_back(cosine_loss_curve(spec1, off, w_grid));
    curves2.push_back(cosine_loss_curve(spec2, off, w_grid));
  }
  BruteForceResult best;
  bool first = true;
  for (std::size_t i = 0; i < q_grid.size(); ++i)
    for (std::size_t j = 0; j < q_grid.size(); ++j) {
      double d = curve_discrepancy(curves1[i], curves2[j]);
      if (first || d < best.discrepancy) {
        best = {q_grid[i], q_grid[j], d};
        first = false;
      }
    }
  return best;
}

struct VectorData {
  std::vector<std::array<double, 2>> x;
  std::vector<double> y;
};

inline VectorData make_linear_data(const ToyClientSpec& spec, std::uint64_t extra_seed) {
  spec.validate();
  if (spec.w_true.size() != 2)
    throw std::invalid_argument("linear toy: w_true must have 2 dimensions");
  std::mt19937_64 rng(mix_seed(spec.seed, extra_seed));
  std::normal_distribution<double> gauss(0.0, 1.0);
  VectorData d;
  d.x.resize(spec.n);
  d.y.resize(spec.n);
  for (int i = 0; i < spec.n; ++i) {
    d.x[i] = {gauss(rng), gauss(rng)};
    d.y[i] = spec.w_true[0] * d.x[i][0] + spec.w_true[1] * d.x[i][1] +
             spec.noise_std * gauss(rng);
  }
  return d;
}

struct FedLinResult {
  std::vector<double> round_losses;  // aggregated-model loss after each round
  std::array<double, 2> final_w{0.0, 0.0};
  std::array<double, 2> final_q{0.0, 0.0};
};

/// Two-client federated linear regression with optional learned input
/// offsets. Each round both clients take `kLocalSteps` full-batch SGD passes
/// starting from the aggregated w (offset step first, mirroring the protocol),
/// then the server averages w. q stays local to its client.
inline FedLinResult federated_linear_regression(const ToyClientSpec& spec1,
                                                const ToyClientSpec& spec2, bool with_offsets,
                                                int rounds, double lr, std::uint64_t seed,
                                                double p = 0.1, double lr_q = -1.0) {
  if (rounds < 1) throw std::invalid_argument("federated_linear_regression: rounds >= 1");
  if (lr_q < 0.0) lr_q = lr;
  constexpr int kLocalSteps = 5;

  const std::array<VectorData, 2> data = {make_linear_data(spec1, seed),
                                          make_linear_data(spec2, seed)};
  std::array<double, 2> w{0.0, 0.0};
  std::array<double, 2> q{0.0, 0.0};

  auto shifted = [&](int k, int i, int dim) {
    return (1.0 + (with_offsets ? p : 0.0)) * data[k].x[i][dim] + (with_offsets ? q[k] : 0.0);
  };
  auto client_loss = [&](int k, const std::array<double, 2>& weights) {
    double loss = 0.0;
    const int n = static_cast<int>(data[k].x.size());
    for (int i = 0; i < n; ++i) {
      double pred = weights[0] * shifted(k, i, 0) + weights[1] * shifted(k, i, 1);
      double r = pred - data[k].y[i];
      loss += r * r;
    }
    return loss / n;
  };

  FedLinResult result;
  for (int round = 0; round < rounds; ++round) {
    std::array<std::array<double, 2>, 2> local_w{w, w};
    for (int k = 0; k < 2; ++k) {
      const int n = static_cast<int>(data[k].x.size());
      for (int step = 0; step < kLocalSteps; ++step) {
        if (with_offsets) {
          // Offset update first, as in the full protocol.
          double grad_q = 0.0;
          for (int i = 0; i < n; ++i) {
            double pred = local_w[k][0] * shifted(k, i, 0) + local_w[k][1] * shifted(k, i, 1);
            grad_q += 2.0 * (pred - data[k].y[i]) * (local_w[k][0] + local_w[k][1]);
          }
          q[k] -= lr_q * grad_q / n;
        }
        double g0 = 0.0, g1 = 0.0;
        for (int i = 0; i < n; ++i) {
          double s0 = shifted(k, i, 0), s1 = shifted(k, i, 1);
          double r = local_w[k][0] * s0 + local_w[k][1] * s1 - data[k].y[i];
          g0 += 2.0 * r * s0;
          g1 += 2.0 * r * s1;
        }
        local_w[k][0] -= lr * g0 / n;
        local_w[k][1] -= lr * g1 / n;
      }
    }
    w[0] = 0.5 * (local_w[0][0] + local_w[1][0]);
    w[1] = 0.5 * (local_w[0][1] + local_w[1][1]);
    double loss = 0.5 * (client_loss(0, w) + client_loss(1, w));
    if (loss > 1e9)
      throw std::runtime_error("federated_linear_regression: diverged at round " +
                               std::to_string(round));
    result.round_losses.push_back(loss);
  }
  result.final_w = w;
  result.final_q = q;
  return result;
}

}  // namespace fedsim::toy
