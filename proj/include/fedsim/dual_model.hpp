#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedsim/autodiff.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

/// Mixing coefficient of the two input shifts, in [0, 1]. At 0 the offset
/// drops out of the network entirely.
struct Alpha {
  double value = 0.3;

  explicit Alpha(double v = 0.3) : value(v) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("alpha must lie in [0,1]");
  }
};

/// Per-client additive input shift; same shape as one (flattened) sample.
struct Offset {
  Tensor t;

  static Offset zeros(std::size_t dim) { return Offset{Tensor::zeros({dim})}; }
};

struct DenseLayer {
  Tensor weight;  // [in × out]
  Tensor bias;    // [out]
};

/// All weights of the classifier. The backbone is one parameter store applied
/// identically to both input channels; the dense layer consumes the
/// concatenated channel features (or one channel's features in single mode)
/// and the logits layer merges them into class scores.
struct ModelParams {
  std::vector<DenseLayer> backbone;
  DenseLayer dense;
  DenseLayer logits;
  int channels = 2;  // 1 = single-input-channel ablation, 2 = default

  std::size_t input_dim() const { return backbone.front().weight.rows(); }
  std::size_t feature_dim() const { return backbone.back().weight.cols(); }
  std::size_t num_classes() const { return logits.weight.cols(); }

  /// Fixed traversal order used by aggregation, SGD, sizing, and checkpoints.
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    for (std::size_t i = 0; i < backbone.size(); ++i) {
      fn("backbone." + std::to_string(i) + ".weight", backbone[i].weight);
      fn("backbone." + std::to_string(i) + ".bias", backbone[i].bias);
    }
    fn("dense.weight", dense.weight);
    fn("dense.bias", dense.bias);
    fn("logits.weight", logits.weight);
    fn("logits.bias", logits.bias);
  }

  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    const_cast<ModelParams*>(this)->for_each_tensor(
        [&](const std::string& name, Tensor& t) { fn(name, static_cast<const Tensor&>(t)); });
  }
};

namespace detail {
inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor w({fan_in, fan_out});
  for (double& v : w.data) v = dist(rng);
  return w;
}
}  // namespace detail

/// Builds a model with ReLU backbone `input_dim -> hidden[0] -> ...`, a linear
/// dense layer of width `dense_width` over the concatenated channel features,
/// and a logits layer with `num_classes` outputs. Biases start at zero.
inline ModelParams init_model(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                              std::size_t dense_width, std::size_t num_classes, int channels,
                              std::uint64_t seed) {
  if (channels != 1 && channels != 2)
    throw std::invalid_argument("init_model: channels must be 1 or 2");
  if (hidden.empty()) throw std::invalid_argument("init_model: need at least one hidden layer");
  std::mt19937_64 rng(seed);
  ModelParams m;
  m.channels = channels;
  std::size_t in = input_dim;
  for (std::size_t width : hidden) {
    m.backbone.push_back({detail::glorot_uniform(in, width, rng), Tensor::zeros({width})});
    in = width;
  }
  std::size_t concat = in * static_cast<std::size_t>(channels);
  m.dense = {detail::glorot_uniform(concat, dense_width, rng), Tensor::zeros({dense_width})};
  m.logits = {detail::glorot_uniform(dense_width, num_classes, rng),
              Tensor::zeros({num_classes})};
  return m;
}

/// The two linear input shifts applied to one sample:
/// ch1 = (1-a)x + a t, ch2 = (1+a)x - a t. Their sum is 2x exactly, so the
/// pair always retains the original sample.
inline std::pair<Tensor, Tensor> combine(const Tensor& x, const Offset& offset, Alpha alpha) {
  if (!x.same_shape(offset.t))
    throw std::invalid_argument("combine: sample and offset shapes differ");
  const double a = alpha.value;
  Tensor ch1 = x, ch2 = x;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    ch1.data[i] = (1.0 - a) * x.data[i] + a * offset.t.data[i];
    ch2.data[i] = (1.0 + a) * x.data[i] - a * offset.t.data[i];
  }
  return {std::move(ch1), std::move(ch2)};
}

/// Handles into a recorded loss graph; leaves stay live for backward().
struct LossGraph {
  Tape tape;
  Tape::Id loss = 0;
  Tape::Id offset_leaf = 0;
  std::vector<Tape::Id> param_leaves;  // aligned with for_each_tensor order
  Tape::Id logits_node = 0;
};

namespace detail {
inline Tape::Id backbone_pass(Tape& tape, const std::vector<Tape::Id>& leaves,
                              std::size_t backbone_layers, Tape::Id x) {
  Tape::Id h = x;
  for (std::size_t i = 0; i < backbone_layers; ++i) {
    h = tape.add_bias(tape.matmul(h, leaves[2 * i]), leaves[2 * i + 1]);
    h = tape.relu(h);
  }
  return h;
}
}  // namespace detail

/// Records the full forward pass for a batch: channel shifts, shared
/// backbone, dense + logits layers, mean cross entropy. Gradients w.r.t.
/// every parameter tensor and the offset come from one backward() call.
inline LossGraph build_loss_graph(const ModelParams& params, const Tensor& inputs,
                                  const std::vector<int>& labels, const Offset& offset,
                                  Alpha alpha) {
  if (inputs.rank() != 2) throw std::invalid_argument("loss graph: inputs must be [B×d]");
  if (inputs.rows() == 0 || labels.empty())
    throw std::invalid_argument("loss graph: empty batch");
  if (offset.t.numel() != inputs.cols())
    throw std::invalid_argument("loss graph: offset length must equal input dim");

  LossGraph g;
  Tape& tape = g.tape;
  params.for_each_tensor([&](const std::string&, const Tensor& t) {
    g.param_leaves.push_back(tape.input(t));
  });
  const std::size_t nb = params.backbone.size();
  Tape::Id x = tape.input(inputs);
  g.offset_leaf = tape.input(offset.t);

  const double a = alpha.value;
  Tape::Id ch1 = tape.row_affine(1.0 - a, x, a, g.offset_leaf);
  Tape::Id f1 = detail::backbone_pass(tape, g.param_leaves, nb, ch1);
  Tape::Id features = f1;
  if (params.channels == 2) {
    Tape::Id ch2 = tape.row_affine(1.0 + a, x, -a, g.offset_leaf);
    Tape::Id f2 = detail::backbone_pass(tape, g.param_leaves, nb, ch2);
    features = tape.concat_cols(f1, f2);
  }
  Tape::Id dense = tape.add_bias(tape.matmul(features, g.param_leaves[2 * nb]),
                                 g.param_leaves[2 * nb + 1]);
  g.logits_node = tape.add_bias(tape.matmul(dense, g.param_leaves[2 * nb + 2]),
                                g.param_leaves[2 * nb + 3]);
  g.loss = tape.softmax_cross_entropy(g.logits_node, labels);
  return g;
}

/// Mean cross entropy of the batch under the current offset; forward only.
inline double loss_batch(const ModelParams& params, const Tensor& inputs,
                         const std::vector<int>& labels, const Offset& offset, Alpha alpha) {
  LossGraph g = build_loss_graph(params, inputs, labels, offset, alpha);
  return g.tape.value(g.loss).data[0];
}

/// Class scores for a batch of samples, offset applied.
inline Tensor predict_logits(const ModelParams& params, const Tensor& inputs,
                             const Offset& offset, Alpha alpha) {
  std::vector<int> dummy(inputs.rows(), 0);
  LossGraph g = build_loss_graph(params, inputs, dummy, offset, alpha);
  return g.tape.value(g.logits_node);
}

/// Argmax over a logits row; ties break to the lowest class index.
inline int argmax_row(const Tensor& logits, std::size_t row) {
  int best = 0;
  for (std::size_t j = 1; j < logits.cols(); ++j)
    if (logits.at(row, j) > logits.at(row, best)) best = static_cast<int>(j);
  return best;
}

/// Predicted class for a single sample x (shape [d]).
inline int predict(const ModelParams& params, const Tensor& x, const Offset& offset,
                   Alpha alpha) {
  Tensor batch({1, x.numel()}, x.data);
  Tensor logits = predict_logits(params, batch, offset, alpha);
  return argmax_row(logits, 0);
}

/// Serialized size in bytes of every parameter tensor (wire format).
inline std::size_t model_bytes(const ModelParams& params) {
  std::size_t total = 0;
  params.for_each_tensor(
      [&](const std::string&, const Tensor& t) { total += serialized_size(t.shape); });
  return total;
}

}  // namespace fedsim
