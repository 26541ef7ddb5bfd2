#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsim/autodiff.hpp"
#include "fedsim/dual_model.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

/// One federated client: its slice of the data, its personal offset, and its
/// own RNG stream (seeded once, so results never depend on scheduling).
struct ClientState {
  int client_id = 0;
  Tensor inputs;            // [n × d]
  std::vector<int> labels;  // n entries
  Offset offset;
  std::mt19937_64 rng;

  ClientState(int id, Tensor inputs_in, std::vector<int> labels_in, std::uint64_t seed)
      : client_id(id),
        inputs(std::move(inputs_in)),
        labels(std::move(labels_in)),
        offset(Offset::zeros(inputs.cols())),
        rng(seed) {
    if (labels.size() == 0 || inputs.rows() != labels.size())
      throw std::invalid_argument("client: need n >= 1 samples with matching labels");
  }

  std::size_t num_samples() const { return labels.size(); }
};

/// One instrumented optimization step; `kind` is 'o' for the offset update
/// and 'm' for the model update. Used by tests for the ordering contract and
/// by the optional step-log CSV.
struct StepEvent {
  int epoch;
  int batch;
  char kind;
  double loss;
};

struct LocalRoundResult {
  ModelParams model;
  Offset offset;
  double mean_train_loss = 0.0;
  std::size_t samples_seen = 0;
};

/// Runs E local epochs of the per-minibatch alternating optimization:
/// a fresh forward pass and one SGD step on the offset, then a second fresh
/// forward pass (inputs recombined with the updated offset) and one SGD step
/// on the model. Returns the trained copies; the caller owns what to do with
/// them. The reported loss is the sample-weighted mean of the model-step
/// losses.
inline LocalRoundResult local_round(ClientState& state, const ModelParams& global_model,
                                    const Offset& incoming_offset, const SgdConfig& cfg,
                                    int epochs, Alpha alpha,
                                    std::vector<StepEvent>* step_log = nullptr) {
  cfg.validate();
  if (epochs < 1) throw std::invalid_argument("local_round: epochs must be >= 1");
  if (incoming_offset.t.numel() != state.inputs.cols())
    throw std::invalid_argument("local_round: offset dimension mismatch");

  const std::size_t n = state.num_samples();
  const std::size_t batch_size = std::min<std::size_t>(cfg.batch_size, n);

  LocalRoundResult result;
  result.model = global_model;
  result.offset = incoming_offset;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  double loss_weighted = 0.0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), state.rng);
    int batch_index = 0;
    for (std::size_t start = 0; start < n; start += batch_size, ++batch_index) {
      const std::size_t count = std::min(batch_size, n - start);
      Tensor bx({count, state.inputs.cols()});
      std::vector<int> by(count);
      for (std::size_t r = 0; r < count; ++r) {
        const std::size_t src = order[start + r];
        for (std::size_t j = 0; j < state.inputs.cols(); ++j)
          bx.at(r, j) = state.inputs.at(src, j);
        by[r] = state.labels[src];
      }

      // Offset step first (fresh forward pass).
      {
        LossGraph g = build_loss_graph(result.model, bx, by, result.offset, alpha);
        const double loss = g.tape.value(g.loss).data[0];
        if (!std::isfinite(loss))
          throw std::runtime_error("local_round: non-finite loss at client " +
                                   std::to_string(state.client_id) + " epoch " +
                                   std::to_string(epoch) + " batch " +
                                   std::to_string(batch_index) + " (offset step)");
        auto grads = g.tape.backward(g.loss);
        result.offset.t =
            sgd_step(result.offset.t, grads[g.offset_leaf], cfg.learning_rate_offset);
        if (step_log) step_log->push_back({epoch, batch_index, 'o', loss});
      }

      // Model step on the recombined batch.
      {
        LossGraph g = build_loss_graph(result.model, bx, by, result.offset, alpha);
        const double loss = g.tape.value(g.loss).data[0];
        if (!std::isfinite(loss))
          throw std::runtime_error("local_round: non-finite loss at client " +
                                   std::to_string(state.client_id) + " epoch " +
                                   std::to_string(epoch) + " batch " +
                                   std::to_string(batch_index) + " (model step)");
        auto grads = g.tape.backward(g.loss);
        std::size_t leaf = 0;
        result.model.for_each_tensor([&](const std::string&, Tensor& t) {
          t = sgd_step(t, grads[g.param_leaves[leaf]], cfg.learning_rate_model);
          ++leaf;
        });
        if (step_log) step_log->push_back({epoch, batch_index, 'm', loss});
        loss_weighted += loss * static_cast<double>(count);
      }
      result.samples_seen += count;
    }
  }
  result.mean_train_loss = loss_weighted / static_cast<double>(result.samples_seen);
  return result;
}

/// Accuracy of `model` on a class-restricted test set, with the client's own
/// offset applied to every input first.
inline double evaluate_local(const ClientState& state, const ModelParams& model, Alpha alpha,
                             const Tensor& test_inputs, const std::vector<int>& test_labels) {
  if (test_labels.empty() || test_inputs.rank() != 2 ||
      test_inputs.rows() != test_labels.size())
    throw std::invalid_argument("evaluate_local: nonempty test set required");
  Tensor logits = predict_logits(model, test_inputs, state.offset, alpha);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_labels.size(); ++i)
    if (argmax_row(logits, i) == test_labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(test_labels.size());
}

}  // namespace fedsim
