#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace unicaclf {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles. Rows are time instants throughout the
/// library, columns are channels.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const noexcept {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Cosine similarity; 0 when either vector has zero norm.
inline double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

/// Accumulates d cos(a,b) into grad_a and grad_b, scaled by upstream.
inline void cosine_backward(std::span<const double> a, std::span<const double> b,
                            double upstream, std::span<double> grad_a,
                            std::span<double> grad_b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0 || upstream == 0.0) return;
  const double inv = 1.0 / (na * nb);
  const double c = dot(a, b) * inv;
  for (std::size_t i = 0; i < a.size(); ++i) {
    grad_a[i] += upstream * (b[i] * inv - c * a[i] / (na * na));
    grad_b[i] += upstream * (a[i] * inv - c * b[i] / (nb * nb));
  }
}

/// out = W x for a square or rectangular W (rows = out dim).
inline Vector matvec(const Matrix& w, std::span<const double> x) {
  if (w.cols() != x.size()) throw std::invalid_argument("matvec: shape mismatch");
  Vector out(w.rows(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) out[r] = dot(w.row(r), x);
  return out;
}

/// out += Wᵀ y
inline void matvec_transposed_acc(const Matrix& w, std::span<const double> y,
                                  std::span<double> out) {
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const double yr = y[r];
    if (yr == 0.0) continue;
    auto wr = w.row(r);
    for (std::size_t c = 0; c < w.cols(); ++c) out[c] += wr[c] * yr;
  }
}

/// G += y xᵀ
inline void outer_acc(std::span<const double> y, std::span<const double> x, Matrix& g) {
  for (std::size_t r = 0; r < y.size(); ++r) {
    if (y[r] == 0.0) continue;
    auto gr = g.row(r);
    for (std::size_t c = 0; c < x.size(); ++c) gr[c] += y[r] * x[c];
  }
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace unicaclf
