#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

#include "fedsim/tensor.hpp"

namespace fedsim {

/// Learning-rate / batching knobs for the alternating local optimization.
struct SgdConfig {
  double learning_rate_model = 5e-3;
  double learning_rate_offset = 1e-3;
  std::size_t batch_size = 32;

  void validate() const {
    if (!(learning_rate_model >= 0.0) || !std::isfinite(learning_rate_model) ||
        !(learning_rate_offset >= 0.0) || !std::isfinite(learning_rate_offset))
      throw std::invalid_argument("sgd config: learning rates must be finite and >= 0");
    if (batch_size < 1) throw std::invalid_argument("sgd config: batch_size must be >= 1");
  }
};

/// Reverse-mode tape over Tensor values.
///
/// Every operation records one node; operands always precede their users, so
/// a single reverse sweep visits each node exactly once. The op set is the
/// minimum needed for MLP forward passes, the two-channel input combination,
/// cross entropy, and l2 regression losses. Tapes are single-owner and cheap
/// to rebuild per minibatch.
class Tape {
 public:
  using Id = std::size_t;

  /// Records a leaf tensor (model parameter, offset, or constant input).
  Id input(Tensor value) { return push(Op::kInput, kNone, kNone, std::move(value)); }

  /// a [m×k] times b [k×n] -> [m×n].
  Id matmul(Id a, Id b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows())
      throw std::invalid_argument("matmul: incompatible shapes " + shape_str(ta.shape) +
                                  " x " + shape_str(tb.shape));
    Tensor out({ta.rows(), tb.cols()});
    for (std::size_t i = 0; i < ta.rows(); ++i)
      for (std::size_t k = 0; k < ta.cols(); ++k) {
        double aik = ta.at(i, k);
        if (aik == 0.0) continue;
        for (std::size_t j = 0; j < tb.cols(); ++j) out.at(i, j) += aik * tb.at(k, j);
      }
    return push(Op::kMatmul, a, b, std::move(out));
  }

  /// x [B×n] plus bias [n], broadcast over rows.
  Id add_bias(Id x, Id bias) {
    const Tensor& tx = value(x);
    const Tensor& tb = value(bias);
    if (tx.rank() != 2 || tb.numel() != tx.cols())
      throw std::invalid_argument("add_bias: bias length must equal columns");
    Tensor out = tx;
    for (std::size_t i = 0; i < tx.rows(); ++i)
      for (std::size_t j = 0; j < tx.cols(); ++j) out.at(i, j) += tb.data[j];
    return push(Op::kAddBias, x, bias, std::move(out));
  }

  /// Elementwise max(0, x). Subgradient at 0 is 0.
  Id relu(Id x) {
    Tensor out = value(x);
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return push(Op::kRelu, x, kNone, std::move(out));
  }

  /// Per-row affine mix of a batch with a broadcast vector:
  /// out[i,:] = cx * x[i,:] + ct * t. Carries the two-channel input shifts.
  Id row_affine(double cx, Id x, double ct, Id t) {
    const Tensor& tx = value(x);
    const Tensor& tt = value(t);
    if (tx.rank() != 2 || tt.numel() != tx.cols())
      throw std::invalid_argument("row_affine: vector length must equal batch columns");
    Tensor out({tx.rows(), tx.cols()});
    for (std::size_t i = 0; i < tx.rows(); ++i)
      for (std::size_t j = 0; j < tx.cols(); ++j)
        out.at(i, j) = cx * tx.at(i, j) + ct * tt.data[j];
    Node& n = record(push(Op::kRowAffine, x, t, std::move(out)));
    n.ca = cx;
    n.cb = ct;
    return size() - 1;
  }

  Id add(Id a, Id b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_shape(tb)) throw std::invalid_argument("add: shape mismatch");
    Tensor out = ta;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
    return push(Op::kAdd, a, b, std::move(out));
  }

  Id scale(Id a, double s) {
    Tensor out = value(a);
    for (double& v : out.data) v *= s;
    Node& n = record(push(Op::kScale, a, kNone, std::move(out)));
    n.ca = s;
    return size() - 1;
  }

  /// Concatenates two batches along columns: [B×n1], [B×n2] -> [B×(n1+n2)].
  Id concat_cols(Id a, Id b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.rows() != tb.rows())
      throw std::invalid_argument("concat_cols: row counts differ");
    Tensor out({ta.rows(), ta.cols() + tb.cols()});
    for (std::size_t i = 0; i < ta.rows(); ++i) {
      for (std::size_t j = 0; j < ta.cols(); ++j) out.at(i, j) = ta.at(i, j);
      for (std::size_t j = 0; j < tb.cols(); ++j) out.at(i, ta.cols() + j) = tb.at(i, j);
    }
    return push(Op::kConcatCols, a, b, std::move(out));
  }

  /// Mean over the batch of -log softmax(logits)[label]. Stabilized by
  /// max-subtraction so confident logits cannot overflow.
  Id softmax_cross_entropy(Id logits, std::vector<int> labels) {
    const Tensor& tl = value(logits);
    if (tl.rank() != 2 || labels.size() != tl.rows())
      throw std::invalid_argument("softmax_cross_entropy: need [B×K] logits and B labels");
    const std::size_t batch = tl.rows(), classes = tl.cols();
    Tensor probs({batch, classes});
    double loss = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
      int y = labels[i];
      if (y < 0 || static_cast<std::size_t>(y) >= classes)
        throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(y) +
                                    " out of range [0," + std::to_string(classes) + ")");
      double mx = tl.at(i, 0);
      for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, tl.at(i, j));
      double sum = 0.0;
      for (std::size_t j = 0; j < classes; ++j) sum += std::exp(tl.at(i, j) - mx);
      double log_sum = std::log(sum);
      for (std::size_t j = 0; j < classes; ++j)
        probs.at(i, j) = std::exp(tl.at(i, j) - mx - log_sum);
      loss += mx + log_sum - tl.at(i, static_cast<std::size_t>(y));
    }
    loss /= static_cast<double>(batch);
    Node& n = record(push(Op::kSoftmaxXent, logits, kNone, Tensor::scalar(loss)));
    n.labels = std::move(labels);
    n.cache = std::move(probs);
    return size() - 1;
  }

  /// Sum of all elements, as a scalar.
  Id sum(Id a) {
    const Tensor& ta = value(a);
    double s = 0.0;
    for (double v : ta.data) s += v;
    return push(Op::kSum, a, kNone, Tensor::scalar(s));
  }

  /// Sum of squared elements, as a scalar.
  Id sum_squares(Id a) {
    const Tensor& ta = value(a);
    double s = 0.0;
    for (double v : ta.data) s += v * v;
    return push(Op::kSumSquares, a, kNone, Tensor::scalar(s));
  }

  /// Square root of a scalar node. Gradient at 0 is taken as 0 so that l2
  /// norms of zero residuals stay quiet.
  Id sqrt_scalar(Id a) {
    const Tensor& ta = value(a);
    if (ta.numel() != 1) throw std::invalid_argument("sqrt_scalar: input must be scalar");
    return push(Op::kSqrt, a, kNone, Tensor::scalar(std::sqrt(ta.data[0])));
  }

  const Tensor& value(Id id) const { return nodes_.at(id).value; }
  std::size_t size() const { return nodes_.size(); }

  /// Runs the reverse sweep from a scalar loss node. Returns one gradient
  /// tensor per recorded node, aligned with node ids; leaves read theirs out.
  std::vector<Tensor> backward(Id loss) const {
    if (loss >= nodes_.size() || value(loss).numel() != 1)
      throw std::invalid_argument("backward: loss must be a scalar node on this tape");
    std::vector<Tensor> grads;
    grads.reserve(nodes_.size());
    for (const Node& n : nodes_) grads.emplace_back(Tensor::zeros(n.value.shape));
    grads[loss].data[0] = 1.0;

    for (std::size_t idx = loss + 1; idx-- > 0;) {
      const Node& n = nodes_[idx];
      const Tensor& g = grads[idx];
      switch (n.op) {
        case Op::kInput:
          break;
        case Op::kMatmul: {
          const Tensor& a = nodes_[n.a].value;
          const Tensor& b = nodes_[n.b].value;
          Tensor& da = grads[n.a];
          Tensor& db = grads[n.b];
          for (std::size_t i = 0; i < a.rows(); ++i)
            for (std::size_t j = 0; j < b.cols(); ++j) {
              double gij = g.at(i, j);
              if (gij == 0.0) continue;
              for (std::size_t k = 0; k < a.cols(); ++k) {
                da.at(i, k) += gij * b.at(k, j);
                db.at(k, j) += gij * a.at(i, k);
              }
            }
          break;
        }
        case Op::kAddBias: {
          Tensor& dx = grads[n.a];
          Tensor& dbias = grads[n.b];
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) {
              dx.at(i, j) += g.at(i, j);
              dbias.data[j] += g.at(i, j);
            }
          break;
        }
        case Op::kRelu: {
          const Tensor& x = nodes_[n.a].value;
          Tensor& dx = grads[n.a];
          for (std::size_t i = 0; i < x.data.size(); ++i)
            if (x.data[i] > 0.0) dx.data[i] += g.data[i];
          break;
        }
        case Op::kRowAffine: {
          Tensor& dx = grads[n.a];
          Tensor& dt = grads[n.b];
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) {
              dx.at(i, j) += n.ca * g.at(i, j);
              dt.data[j] += n.cb * g.at(i, j);
            }
          break;
        }
        case Op::kAdd: {
          Tensor& da = grads[n.a];
          Tensor& db = grads[n.b];
          for (std::size_t i = 0; i < g.data.size(); ++i) {
            da.data[i] += g.data[i];
            db.data[i] += g.data[i];
          }
          break;
        }
        case Op::kScale: {
          Tensor& da = grads[n.a];
          for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] += n.ca * g.data[i];
          break;
        }
        case Op::kConcatCols: {
          const Tensor& a = nodes_[n.a].value;
          Tensor& da = grads[n.a];
          Tensor& db = grads[n.b];
          for (std::size_t i = 0; i < g.rows(); ++i) {
            for (std::size_t j = 0; j < a.cols(); ++j) da.at(i, j) += g.at(i, j);
            for (std::size_t j = a.cols(); j < g.cols(); ++j)
              db.at(i, j - a.cols()) += g.at(i, j);
          }
          break;
        }
        case Op::kSoftmaxXent: {
          Tensor& dl = grads[n.a];
          const Tensor& probs = n.cache;
          const double gs = g.data[0] / static_cast<double>(probs.rows());
          for (std::size_t i = 0; i < probs.rows(); ++i)
            for (std::size_t j = 0; j < probs.cols(); ++j) {
              double indicator = (static_cast<std::size_t>(n.labels[i]) == j) ? 1.0 : 0.0;
              dl.at(i, j) += gs * (probs.at(i, j) - indicator);
            }
          break;
        }
        case Op::kSum: {
          Tensor& da = grads[n.a];
          for (double& v : da.data) v += g.data[0];
          break;
        }
        case Op::kSumSquares: {
          const Tensor& a = nodes_[n.a].value;
          Tensor& da = grads[n.a];
          for (std::size_t i = 0; i < a.data.size(); ++i)
            da.data[i] += 2.0 * a.data[i] * g.data[0];
          break;
        }
        case Op::kSqrt: {
          const double s = nodes_[n.a].value.data[0];
          if (s > 0.0) grads[n.a].data[0] += g.data[0] / (2.0 * std::sqrt(s));
          break;
        }
      }
    }
    return grads;
  }

 private:
  enum class Op {
    kInput,
    kMatmul,
    kAddBias,
    kRelu,
    kRowAffine,
    kAdd,
    kScale,
    kConcatCols,
    kSoftmaxXent,
    kSum,
    kSumSquares,
    kSqrt,
  };

  struct Node {
    Op op;
    Id a;
    Id b;
    Tensor value;
    double ca = 0.0;  // scalar coefficients (row_affine, scale)
    double cb = 0.0;
    std::vector<int> labels;  // softmax_cross_entropy only
    Tensor cache;             // cached softmax probabilities
  };

  static constexpr Id kNone = static_cast<Id>(-1);

  Id push(Op op, Id a, Id b, Tensor value) {
    nodes_.push_back(Node{op, a, b, std::move(value)});
    return nodes_.size() - 1;
  }

  Node& record(Id id) { return nodes_[id]; }

  std::vector<Node> nodes_;
};

}  // namespace fedsim
