#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsim/autodiff.hpp"
#include "fedsim/data.hpp"
#include "fedsim/dual_model.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

enum class OffsetStrategy { kAuto, kNone, kAverage, kNn };

inline const char* strategy_name(OffsetStrategy s) {
  switch (s) {
    case OffsetStrategy::kAuto: return "auto";
    case OffsetStrategy::kNone: return "none";
    case OffsetStrategy::kAverage: return "average";
    case OffsetStrategy::kNn: return "nn";
  }
  return "?";
}

inline std::optional<OffsetStrategy> parse_strategy(const std::string& s) {
  if (s == "auto") return OffsetStrategy::kAuto;
  if (s == "none") return OffsetStrategy::kNone;
  if (s == "average") return OffsetStrategy::kAverage;
  if (s == "nn") return OffsetStrategy::kNn;
  return std::nullopt;
}

/// Elementwise mean of the clients' models.
inline ModelParams aggregate_models(const std::vector<ModelParams>& models) {
  if (models.empty()) throw std::invalid_argument("aggregate_models: empty list");
  ModelParams out = models.front();
  std::vector<Tensor*> acc;
  out.for_each_tensor([&](const std::string&, Tensor& t) { acc.push_back(&t); });
  for (std::size_t m = 1; m < models.size(); ++m) {
    std::size_t slot = 0;
    models[m].for_each_tensor([&](const std::string& name, const Tensor& t) {
      if (!acc[slot]->same_shape(t))
        throw std::invalid_argument("aggregate_models: shape mismatch at " + name);
      for (std::size_t i = 0; i < t.data.size(); ++i) acc[slot]->data[i] += t.data[i];
      ++slot;
    });
  }
  const double inv = 1.0 / static_cast<double>(models.size());
  for (Tensor* t : acc)
    for (double& v : t->data) v *= inv;
  return out;
}

/// Elementwise mean offset; the same result goes back to every client.
inline Offset aggregate_offsets_average(const std::vector<Offset>& offsets) {
  if (offsets.empty()) throw std::invalid_argument("aggregate_offsets_average: empty list");
  Offset out = offsets.front();
  for (std::size_t m = 1; m < offsets.size(); ++m) {
    if (!out.t.same_shape(offsets[m].t))
      throw std::invalid_argument("aggregate_offsets_average: shape mismatch");
    for (std::size_t i = 0; i < out.t.data.size(); ++i) out.t.data[i] += offsets[m].t.data[i];
  }
  for (double& v : out.t.data) v /= static_cast<double>(offsets.size());
  return out;
}

/// Offset regression network: a residual MLP head on top of a skip
/// connection, taking the flattened offset concatenated with the client's
/// class embedding. The residual's output layer starts at zero, so an
/// untrained net reproduces its input offset exactly.
class OffsetAggregatorNet {
 public:
  OffsetAggregatorNet(std::size_t offset_dim, std::size_t num_classes, std::size_t hidden,
                      std::uint64_t seed)
      : offset_dim_(offset_dim), num_classes_(num_classes) {
    std::mt19937_64 rng(seed);
    hidden_ = {detail::glorot_uniform(offset_dim + num_classes, hidden, rng),
               Tensor::zeros({hidden})};
    out_ = {Tensor::zeros({hidden, offset_dim}), Tensor::zeros({offset_dim})};
  }

  std::size_t offset_dim() const { return offset_dim_; }
  std::size_t num_classes() const { return num_classes_; }

  Tensor apply(const ClassEmbedding& embedding, const Tensor& offset) const {
    Tape tape;
    Leaves leaves = record_params(tape);
    Tape::Id out = output_node(tape, leaves, embedding, offset);
    return flat(tape.value(out));
  }

  /// One full-batch SGD pass on sum_i l2norm(net(e_i, t_i) - target_i).
  struct TrainReport {
    double initial_loss = 0.0;
    double final_loss = 0.0;
  };

  struct Pair {
    ClassEmbedding embedding;
    Tensor current;  // offset uploaded this round
    Tensor target;   // offset the server returned last round
  };

  TrainReport train(const std::vector<Pair>& pairs, double lr, int steps) {
    if (pairs.empty()) throw std::invalid_argument("train_aggregator: no pairs");
    if (steps < 1) throw std::invalid_argument("train_aggregator: steps must be >= 1");
    TrainReport report;
    for (int step = 0; step < steps; ++step) {
      Tape tape;
      Leaves leaves = record_params(tape);
      Tape::Id loss = kInvalid;
      for (const Pair& p : pairs) {
        Tape::Id out = output_node(tape, leaves, p.embedding, p.current);
        Tensor target_row({1, offset_dim_}, p.target.data);
        Tape::Id diff = tape.add(out, tape.scale(tape.input(target_row), -1.0));
        Tape::Id dist = tape.sqrt_scalar(tape.sum_squares(diff));
        loss = (loss == kInvalid) ? dist : tape.add(loss, dist);
      }
      const double loss_value = tape.value(loss).data[0];
      if (step == 0) report.initial_loss = loss_value;
      if (loss_value > 1e6)
        throw std::runtime_error("train_aggregator: diverged, loss " +
                                 std::to_string(loss_value) + " at step " +
                                 std::to_string(step));
      auto grads = tape.backward(loss);
      hidden_.weight = sgd_step(hidden_.weight, grads[leaves.w1], lr);
      hidden_.bias = sgd_step(hidden_.bias, grads[leaves.b1], lr);
      out_.weight = sgd_step(out_.weight, grads[leaves.w2], lr);
      out_.bias = sgd_step(out_.bias, grads[leaves.b2], lr);
    }
    report.final_loss = evaluate_loss(pairs);
    return report;
  }

  double evaluate_loss(const std::vector<Pair>& pairs) const {
    double total = 0.0;
    for (const Pair& p : pairs) {
      Tensor out = apply(p.embedding, p.current);
      double sq = 0.0;
      for (std::size_t i = 0; i < out.data.size(); ++i) {
        double d = out.data[i] - p.target.data[i];
        sq += d * d;
      }
      total += std::sqrt(sq);
    }
    return total;
  }

 private:
  struct Leaves {
    Tape::Id w1, b1, w2, b2;
  };
  static constexpr Tape::Id kInvalid = static_cast<Tape::Id>(-1);

  Leaves record_params(Tape& tape) const {
    return {tape.input(hidden_.weight), tape.input(hidden_.bias), tape.input(out_.weight),
            tape.input(out_.bias)};
  }

  Tape::Id output_node(Tape& tape, const Leaves& leaves, const ClassEmbedding& embedding,
                       const Tensor& offset) const {
    if (offset.numel() != offset_dim_ || embedding.e.size() != num_classes_)
      throw std::invalid_argument("aggregator: input dimensions mismatch");
    std::vector<double> z = offset.data;
    z.insert(z.end(), embedding.e.begin(), embedding.e.end());
    Tape::Id in = tape.input(Tensor({1, offset_dim_ + num_classes_}, std::move(z)));
    Tape::Id h = tape.relu(tape.add_bias(tape.matmul(in, leaves.w1), leaves.b1));
    Tape::Id residual = tape.add_bias(tape.matmul(h, leaves.w2), leaves.b2);
    Tape::Id skip = tape.input(Tensor({1, offset_dim_}, offset.data));
    return tape.add(skip, residual);
  }

  static Tensor flat(const Tensor& row) { return Tensor({row.numel()}, row.data); }

  std::size_t offset_dim_;
  std::size_t num_classes_;
  DenseLayer hidden_;
  DenseLayer out_;
};

inline OffsetAggregatorNet::TrainReport train_aggregator(
    OffsetAggregatorNet& net, const std::vector<OffsetAggregatorNet::Pair>& pairs, double lr,
    int steps) {
  return net.train(pairs, lr, steps);
}

/// Per-client aggregated offsets t_i' = net(e_i, t_i); order preserved.
inline std::vector<Offset> aggregate_offsets_nn(const OffsetAggregatorNet& net,
                                                const std::vector<ClassEmbedding>& embeddings,
                                                const std::vector<Offset>& offsets) {
  if (embeddings.size() != offsets.size())
    throw std::invalid_argument("aggregate_offsets_nn: list length mismatch");
  std::vector<Offset> out;
  out.reserve(offsets.size());
  for (std::size_t i = 0; i < offsets.size(); ++i)
    out.push_back(Offset{net.apply(embeddings[i], offsets[i].t)});
  return out;
}

/// Resolves the offset-aggregation strategy: an explicit request wins; on
/// auto, offsets are combined by the regression net only while heterogeneity
/// stays strictly below the threshold, and left alone otherwise.
inline OffsetStrategy select_strategy(double dh, double threshold, OffsetStrategy requested) {
  if (!(dh >= 0.0 && dh <= 1.0) || !(threshold >= 0.0 && threshold <= 1.0))
    throw std::invalid_argument("select_strategy: dh and threshold must lie in [0,1]");
  if (requested != OffsetStrategy::kAuto) return requested;
  return dh < threshold ? OffsetStrategy::kNn : OffsetStrategy::kNone;
}

/// The server side of one experiment: the global model, every client's
/// current offset, and the (lazily created) aggregation net.
struct ServerState {
  ModelParams global_model;
  std::vector<Offset> per_client_offsets;
  std::optional<OffsetAggregatorNet> aggregator;
  double dh_threshold = 0.5;
  OffsetStrategy strategy = OffsetStrategy::kAuto;
};

}  // namespace fedsim
