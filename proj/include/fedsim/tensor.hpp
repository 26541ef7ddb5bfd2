#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedsim {

/// Dense n-dimensional array of doubles in row-major order. The universal
/// numeric carrier of the simulator; instances are plain values.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape_in)
      : shape(std::move(shape_in)), data(numel_of(shape), 0.0) {}

  Tensor(std::vector<std::size_t> shape_in, std::vector<double> data_in)
      : shape(std::move(shape_in)), data(std::move(data_in)) {
    if (numel_of(shape) != data.size())
      throw std::invalid_argument("tensor: shape does not match data length");
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) {
      if (d == 0) throw std::invalid_argument("tensor: zero dimension");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  // 2-D accessors; rows/cols only make sense for rank-2 tensors.
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }
  double& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

/// One plain SGD update: param - lr * grad, elementwise.
inline Tensor sgd_step(const Tensor& param, const Tensor& grad, double lr) {
  if (!param.same_shape(grad))
    throw std::invalid_argument("sgd_step: shape mismatch " + shape_str(param.shape) +
                                " vs " + shape_str(grad.shape));
  Tensor out = param;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= lr * grad.data[i];
  return out;
}

// --- wire format -----------------------------------------------------------
//
// Tensors travel and persist as little-endian 32-bit floats preceded by a
// header of (rank: u32, then one u32 per dimension). This is the payload the
// communication-overhead accounting measures; in-memory math stays in f64.

inline std::size_t serialized_size(const std::vector<std::size_t>& shape) {
  return 4 + 4 * shape.size() + 4 * Tensor::numel_of(shape);
}

namespace detail {
inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
}  // namespace detail

inline void serialize_tensor(const Tensor& t, std::vector<std::uint8_t>& out) {
  detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : t.data) {
    float f = static_cast<float>(v);
    std::uint32_t bits;
    static_assert(sizeof(bits) == sizeof(f));
    std::memcpy(&bits, &f, sizeof(bits));
    detail::put_u32(out, bits);
  }
}

inline std::vector<std::uint8_t> serialize_tensor(const Tensor& t) {
  std::vector<std::uint8_t> out;
  out.reserve(serialized_size(t.shape));
  serialize_tensor(t, out);
  return out;
}

/// Reads one tensor starting at `pos`; advances `pos` past it.
inline Tensor deserialize_tensor(const std::vector<std::uint8_t>& bytes, std::size_t& pos) {
  auto need = [&](std::size_t n) {
    if (pos + n > bytes.size()) throw std::runtime_error("tensor deserialize: truncated input");
  };
  need(4);
  std::uint32_t rank = detail::get_u32(&bytes[pos]);
  pos += 4;
  std::vector<std::size_t> shape(rank);
  need(4 * rank);
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape[i] = detail::get_u32(&bytes[pos]);
    pos += 4;
  }
  std::size_t n = Tensor::numel_of(shape);
  need(4 * n);
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = detail::get_u32(&bytes[pos]);
    pos += 4;
    float f;
    std::memcpy(&f, &bits, sizeof(f));
    data[i] = static_cast<double>(f);
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace fedsim
