#pragma once

// Context-aware perception (CaP) pyramid: the heterogeneous activation
// operation (HAO) that amplifies instants pointing away from the global
// context, and the adaptive context updater (ACU) that re-estimates the
// context with attention weights favouring agreeing instants.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "unicaclf/tensor.hpp"
#include "unicaclf/types.hpp"

namespace unicaclf {

/// Per-instant HAO gate m_t = ReLU(-cos(Wq g, Wk x_t)).
struct ActivationMask {
  Vector values;
  Vector cosine;  // cos(Wq g, Wk x_t); the gate is exactly -cosine where positive
  std::vector<std::uint8_t> degenerate;  // zero-norm query or key at this instant
};

struct CapLevelParams {
  Matrix wq;
  Matrix wk;
  Matrix wv;
  double beta_raw = 0.0;  // unconstrained; beta = sigmoid(beta_raw)

  double beta() const { return sigmoid(beta_raw); }
};

inline Vector init_context(const Matrix& features) {
  if (features.rows() == 0) throw std::invalid_argument("init_context: empty feature matrix");
  Vector g(features.cols(), 0.0);
  for (std::size_t t = 0; t < features.rows(); ++t) {
    auto row = features.row(t);
    for (std::size_t c = 0; c < g.size(); ++c) g[c] += row[c];
  }
  const double inv = 1.0 / static_cast<double>(features.rows());
  for (double& v : g) v *= inv;
  return g;
}

// ---------------------------------------------------------------------------
// HAO

struct HaoResult {
  Matrix output;
  ActivationMask mask;
  Vector query;   // Wq g
  Matrix keys;    // rows Wk x_t
  Matrix values;  // rows Wv x_t
};

inline void check_projection_shapes(const CapLevelParams& p, std::size_t c) {
  for (const Matrix* w : {&p.wq, &p.wk, &p.wv})
    if (w->rows() != c || w->cols() != c)
      throw std::invalid_argument("hao: projection must be C x C");
}

inline HaoResult hao(std::span<const double> context, const Matrix& features,
                     const CapLevelParams& params) {
  const std::size_t t_len = features.rows();
  const std::size_t c = features.cols();
  if (context.size() != c) throw std::invalid_argument("hao: context dimension mismatch");
  check_projection_shapes(params, c);
  if (!all_finite(context)) throw std::invalid_argument("hao: non-finite context");

  HaoResult r;
  r.query = matvec(params.wq, context);
  r.keys = Matrix(t_len, c);
  r.values = Matrix(t_len, c);
  r.output = features;
  r.mask.values.assign(t_len, 0.0);
  r.mask.cosine.assign(t_len, 0.0);
  r.mask.degenerate.assign(t_len, 0);

  const double qn = norm(r.query);
  for (std::size_t t = 0; t < t_len; ++t) {
    auto x = features.row(t);
    auto k = r.keys.row(t);
    auto v = r.values.row(t);
    for (std::size_t i = 0; i < c; ++i) {
      k[i] = dot(params.wk.row(i), x);
      v[i] = dot(params.wv.row(i), x);
    }
    const double kn = norm(k);
    if (qn == 0.0 || kn == 0.0) r.mask.degenerate[t] = 1;
    const double cs = cosine(r.query, k);
    r.mask.cosine[t] = cs;
    const double m = cs < 0.0 ? -cs : 0.0;
    r.mask.values[t] = m;
    if (m > 0.0) {
      auto out = r.output.row(t);
      for (std::size_t i = 0; i < c; ++i) out[i] = m * v[i] + x[i];
    }
  }
  return r;
}

struct HaoGrads {
  Matrix wq, wk, wv;
  Vector context;
  Matrix features;
};

inline HaoGrads hao_backward(std::span<const double> context, const Matrix& features,
                             const CapLevelParams& params, const HaoResult& fwd,
                             const Matrix& d_output) {
  const std::size_t t_len = features.rows();
  const std::size_t c = features.cols();
  HaoGrads g{Matrix(c, c), Matrix(c, c), Matrix(c, c), Vector(c, 0.0), d_output};
  Vector d_query(c, 0.0);
  Vector d_key(c), d_value(c);
  Vector scratch(c);
  for (std::size_t t = 0; t < t_len; ++t) {
    const double m = fwd.mask.values[t];
    if (m == 0.0) continue;  // gate closed: output is the identity on x_t
    auto dy = d_output.row(t);
    auto x = features.row(t);
    auto v = fwd.values.row(t);
    const double d_gate = dot(dy, v);
    for (std::size_t i = 0; i < c; ++i) d_value[i] = m * dy[i];
    outer_acc(d_value, x, g.wv);
    matvec_transposed_acc(params.wv, d_value, g.features.row(t));

    std::fill(d_key.begin(), d_key.end(), 0.0);
    // m = -cos, so d cos = -d m
    cosine_backward(fwd.query, fwd.keys.row(t), -d_gate, d_query, d_key);
    outer_acc(d_key, x, g.wk);
    matvec_transposed_acc(params.wk, d_key, g.features.row(t));
  }
  outer_acc(d_query, context, g.wq);
  matvec_transposed_acc(params.wq, d_query, g.context);
  return g;
}

// ---------------------------------------------------------------------------
// ACU

struct AcuResult {
  Vector context;
  Vector similarity;  // s_t = cos(x_t, g_prev)
  Vector weights;     // softmax(s)
  Vector pooled;      // sum_t alpha_t x_t
};

inline AcuResult acu(std::span<const double> prev_context, const Matrix& features, double beta) {
  const std::size_t t_len = features.rows();
  const std::size_t c = features.cols();
  if (prev_context.size() != c) throw std::invalid_argument("acu: context dimension mismatch");
  if (t_len == 0) throw std::invalid_argument("acu: empty feature matrix");
  if (!all_finite(prev_context)) throw std::invalid_argument("acu: non-finite context");

  AcuResult r;
  r.similarity.resize(t_len);
  for (std::size_t t = 0; t < t_len; ++t) r.similarity[t] = cosine(features.row(t), prev_context);
  const double mx = *std::max_element(r.similarity.begin(), r.similarity.end());
  r.weights.resize(t_len);
  double z = 0.0;
  for (std::size_t t = 0; t < t_len; ++t) {
    r.weights[t] = std::exp(r.similarity[t] - mx);
    z += r.weights[t];
  }
  for (double& w : r.weights) w /= z;
  r.pooled.assign(c, 0.0);
  for (std::size_t t = 0; t < t_len; ++t) {
    auto x = features.row(t);
    for (std::size_t i = 0; i < c; ++i) r.pooled[i] += r.weights[t] * x[i];
  }
  r.context.resize(c);
  for (std::size_t i = 0; i < c; ++i)
    r.context[i] = beta * prev_context[i] + (1.0 - beta) * r.pooled[i];
  return r;
}

struct AcuGrads {
  Vector prev_context;
  Matrix features;
  double beta = 0.0;
};

inline AcuGrads acu_backward(std::span<const double> prev_context, const Matrix& features,
                             double beta, const AcuResult& fwd, std::span<const double> d_context) {
  const std::size_t t_len = features.rows();
  const std::size_t c = features.cols();
  AcuGrads g{Vector(c, 0.0), Matrix(t_len, c), 0.0};
  Vector d_pooled(c);
  for (std::size_t i = 0; i < c; ++i) {
    g.beta += d_context[i] * (prev_context[i] - fwd.pooled[i]);
    g.prev_context[i] += beta * d_context[i];
    d_pooled[i] = (1.0 - beta) * d_context[i];
  }
  Vector d_weight(t_len);
  double weighted = 0.0;
  for (std::size_t t = 0; t < t_len; ++t) {
    auto x = features.row(t);
    auto dx = g.features.row(t);
    for (std::size_t i = 0; i < c; ++i) dx[i] += fwd.weights[t] * d_pooled[i];
    d_weight[t] = dot(d_pooled, x);
    weighted += fwd.weights[t] * d_weight[t];
  }
  for (std::size_t t = 0; t < t_len; ++t) {
    const double d_sim = fwd.weights[t] * (d_weight[t] - weighted);
    cosine_backward(features.row(t), prev_context, d_sim, g.features.row(t), g.prev_context);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Downsampling between levels

struct DownsampleResult {
  Matrix output;
  std::vector<std::size_t> source;  // flat input index feeding each output element
};

/// Stride-2 max pooling over time; a ragged tail window of size 1 is allowed.
inline DownsampleResult downsample_features_traced(const Matrix& features) {
  if (features.rows() == 0) throw std::invalid_argument("downsample: empty feature matrix");
  const std::size_t t_in = features.rows();
  const std::size_t c = features.cols();
  const std::size_t t_out = (t_in + 1) / 2;
  DownsampleResult r{Matrix(t_out, c), std::vector<std::size_t>(t_out * c)};
  for (std::size_t t = 0; t < t_out; ++t) {
    const std::size_t a = 2 * t;
    const std::size_t b = std::min(a + 1, t_in - 1);
    for (std::size_t i = 0; i < c; ++i) {
      const std::size_t src = features(b, i) > features(a, i) ? b : a;
      r.output(t, i) = features(src, i);
      r.source[t * c + i] = src * c + i;
    }
  }
  return r;
}

inline Matrix downsample_features(const Matrix& features) {
  return downsample_features_traced(features).output;
}

inline Matrix downsample_backward(const DownsampleResult& fwd, std::size_t input_rows,
                                  const Matrix& d_output) {
  Matrix d_in(input_rows, d_output.cols());
  for (std::size_t k = 0; k < fwd.source.size(); ++k) d_in.data()[fwd.source[k]] += d_output.data()[k];
  return d_in;
}

// ---------------------------------------------------------------------------

/// Runs L CaP layers: level 1 at full resolution, every later level on the
/// max-pooled output of the previous one. The context is threaded through.
inline std::vector<PyramidLevel> build_pyramid(const Matrix& features,
                                               std::span<const CapLevelParams> levels) {
  if (levels.empty()) throw std::invalid_argument("build_pyramid: need at least one level");
  std::vector<PyramidLevel> out;
  out.reserve(levels.size());
  Vector context = init_context(features);
  Matrix input = features;
  std::size_t stride = 1;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    if (l > 0) {
      input = downsample_features(out.back().features);
      stride *= 2;
    }
    auto h = hao(context, input, levels[l]);
    auto a = acu(context, h.output, levels[l].beta());
    context = a.context;
    out.push_back(PyramidLevel{static_cast<int>(l + 1), std::move(h.output), a.context, stride});
  }
  return out;
}

inline std::vector<PyramidLevel> build_pyramid(const FeatureSequence& seq,
                                               std::span<const CapLevelParams> levels) {
  return build_pyramid(seq.features, levels);
}

/// Mean over instants of cos(x_t, mean of the level's instants), per level.
inline Vector similarity_profile(std::span<const PyramidLevel> pyramid) {
  if (pyramid.empty()) throw std::invalid_argument("similarity_profile: empty pyramid");
  Vector profile;
  profile.reserve(pyramid.size());
  for (const auto& level : pyramid) {
    const Vector mean = init_context(level.features);
    double s = 0.0;
    for (std::size_t t = 0; t < level.features.rows(); ++t) s += cosine(level.features.row(t), mean);
    profile.push_back(s / static_cast<double>(level.features.rows()));
  }
  return profile;
}

inline double similarity_to_mean(const Matrix& features) {
  PyramidLevel level{1, features, {}, 1};
  return similarity_profile(std::span<const PyramidLevel>(&level, 1))[0];
}

}  // namespace unicaclf
