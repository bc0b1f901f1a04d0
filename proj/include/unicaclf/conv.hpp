#pragma once

#include <stdexcept>

#include "unicaclf/tensor.hpp"

namespace unicaclf {

constexpr std::size_t kConvKernel = 3;

/// Temporal convolution, kernel 3, zero "same" padding.
/// weight(o, k * in + i) multiplies input[t + k - 1][i].
struct Conv1dParams {
  Matrix weight;
  Vector bias;

  std::size_t out_channels() const noexcept { return weight.rows(); }
  std::size_t in_channels() const noexcept { return weight.cols() / kConvKernel; }
};

inline Matrix conv1d(const Matrix& input, const Conv1dParams& p) {
  const std::size_t t_len = input.rows();
  const std::size_t in = input.cols();
  const std::size_t out = p.out_channels();
  if (p.in_channels() != in || p.bias.size() != out)
    throw std::invalid_argument("conv1d: shape mismatch");
  Matrix y(t_len, out);
  for (std::size_t t = 0; t < t_len; ++t) {
    auto yr = y.row(t);
    for (std::size_t o = 0; o < out; ++o) yr[o] = p.bias[o];
    for (std::size_t k = 0; k < kConvKernel; ++k) {
      const auto src = static_cast<std::ptrdiff_t>(t + k) - 1;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
      auto x = input.row(static_cast<std::size_t>(src));
      for (std::size_t o = 0; o < out; ++o) {
        const double* w = p.weight.row(o).data() + k * in;
        double s = 0.0;
        for (std::size_t i = 0; i < in; ++i) s += w[i] * x[i];
        yr[o] += s;
      }
    }
  }
  return y;
}

struct Conv1dGrads {
  Matrix weight;
  Vector bias;
  Matrix input;
};

inline Conv1dGrads conv1d_backward(const Matrix& input, const Conv1dParams& p, const Matrix& d_out) {
  const std::size_t t_len = input.rows();
  const std::size_t in = input.cols();
  const std::size_t out = p.out_channels();
  Conv1dGrads g{Matrix(out, kConvKernel * in), Vector(out, 0.0), Matrix(t_len, in)};
  for (std::size_t t = 0; t < t_len; ++t) {
    auto dy = d_out.row(t);
    for (std::size_t o = 0; o < out; ++o) g.bias[o] += dy[o];
    for (std::size_t k = 0; k < kConvKernel; ++k) {
      const auto src = static_cast<std::ptrdiff_t>(t + k) - 1;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
      auto x = input.row(static_cast<std::size_t>(src));
      auto dx = g.input.row(static_cast<std::size_t>(src));
      for (std::size_t o = 0; o < out; ++o) {
        const double d = dy[o];
        if (d == 0.0) continue;
        const double* w = p.weight.row(o).data() + k * in;
        double* dw = g.weight.row(o).data() + k * in;
        for (std::size_t i = 0; i < in; ++i) {
          dw[i] += d * x[i];
          dx[i] += d * w[i];
        }
      }
    }
  }
  return g;
}

inline Matrix relu(Matrix m) {
  for (double& v : m.data()) v = v > 0.0 ? v : 0.0;
  return m;
}

/// Zeroes gradient entries where the ReLU output was not positive.
inline void relu_backward_inplace(const Matrix& activated, Matrix& grad) {
  for (std::size_t i = 0; i < grad.data().size(); ++i)
    if (!(activated.data()[i] > 0.0)) grad.data()[i] = 0.0;
}

}  // namespace unicaclf
