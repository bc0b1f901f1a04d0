#pragma once

// Anchor-free detection heads shared across pyramid levels. Each instant
// predicts a forgery logit and the distances (in level instants) to the
// start and end of the segment it belongs to.

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "unicaclf/conv.hpp"
#include "unicaclf/types.hpp"

namespace unicaclf {

/// conv(k3) -> ReLU -> conv(k3) -> ReLU -> per-instant linear map.
struct HeadBranch {
  Conv1dParams conv1;
  Conv1dParams conv2;
  Matrix out_weight;  // outputs x hidden
  Vector out_bias;
};

struct HeadParams {
  HeadBranch cls;  // one output
  HeadBranch reg;  // two outputs: log start / end offsets
};

struct LevelPredictions {
  int level = 1;
  Vector logits;
  Vector start_offsets;
  Vector end_offsets;

  std::size_t size() const noexcept { return logits.size(); }
};

struct BranchTrace {
  Matrix hidden1;  // post-ReLU
  Matrix hidden2;  // post-ReLU
  Matrix output;   // pre-activation outputs
};

inline BranchTrace run_branch(const Matrix& x, const HeadBranch& b) {
  BranchTrace tr;
  tr.hidden1 = relu(conv1d(x, b.conv1));
  tr.hidden2 = relu(conv1d(tr.hidden1, b.conv2));
  tr.output = Matrix(x.rows(), b.out_weight.rows());
  for (std::size_t t = 0; t < x.rows(); ++t)
    for (std::size_t o = 0; o < b.out_weight.rows(); ++o)
      tr.output(t, o) = dot(b.out_weight.row(o), tr.hidden2.row(t)) + b.out_bias[o];
  return tr;
}

struct BranchGrads {
  Conv1dParams conv1;
  Conv1dParams conv2;
  Matrix out_weight;
  Vector out_bias;
  Matrix input;
};

inline BranchGrads branch_backward(const Matrix& x, const HeadBranch& b, const BranchTrace& tr,
                                   const Matrix& d_output) {
  BranchGrads g;
  g.out_weight = Matrix(b.out_weight.rows(), b.out_weight.cols());
  g.out_bias.assign(b.out_bias.size(), 0.0);
  Matrix d_h2(x.rows(), b.out_weight.cols());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto dy = d_output.row(t);
    outer_acc(dy, tr.hidden2.row(t), g.out_weight);
    for (std::size_t o = 0; o < dy.size(); ++o) g.out_bias[o] += dy[o];
    matvec_transposed_acc(b.out_weight, dy, d_h2.row(t));
  }
  relu_backward_inplace(tr.hidden2, d_h2);
  auto c2 = conv1d_backward(tr.hidden1, b.conv2, d_h2);
  relu_backward_inplace(tr.hidden1, c2.input);
  auto c1 = conv1d_backward(x, b.conv1, c2.input);
  g.conv2 = {std::move(c2.weight), std::move(c2.bias)};
  g.conv1 = {std::move(c1.weight), std::move(c1.bias)};
  g.input = std::move(c1.input);
  return g;
}

struct HeadsTrace {
  BranchTrace cls;
  BranchTrace reg;
};

inline LevelPredictions predictions_from_trace(int level, const HeadsTrace& tr) {
  const std::size_t n = tr.cls.output.rows();
  LevelPredictions p{level, Vector(n), Vector(n), Vector(n)};
  for (std::size_t t = 0; t < n; ++t) {
    p.logits[t] = tr.cls.output(t, 0);
    p.start_offsets[t] = std::exp(tr.reg.output(t, 0));
    p.end_offsets[t] = std::exp(tr.reg.output(t, 1));
  }
  return p;
}

inline HeadsTrace run_heads_traced(const Matrix& features, const HeadParams& params) {
  return {run_branch(features, params.cls), run_branch(features, params.reg)};
}

inline LevelPredictions run_heads(const PyramidLevel& level, const HeadParams& params) {
  return predictions_from_trace(level.level, run_heads_traced(level.features, params));
}

// ---------------------------------------------------------------------------
// Targets

struct InstantTarget {
  bool positive = false;
  double start_offset = 0.0;  // level-instant units
  double end_offset = 0.0;
};

struct LevelTargets {
  std::vector<InstantTarget> instants;
  std::size_t unmatched = 0;  // positives outside every segment span, matched to the nearest

  std::size_t count_positive() const noexcept {
    std::size_t n = 0;
    for (const auto& t : instants) n += t.positive ? 1 : 0;
    return n;
  }
};

/// Converts segments to this level's instant units, where level instant t
/// sits at time t * stride / instants_per_second.
inline LevelTargets assign_targets(const InstantMask& mask, const SegmentSet& gt, std::size_t stride,
                                   double instants_per_second) {
  LevelTargets out;
  out.instants.resize(mask.size());
  const double scale = instants_per_second / static_cast<double>(stride);
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (mask.labels[t] == 0) continue;
    auto& target = out.instants[t];
    target.positive = true;
    if (gt.empty()) {
      ++out.unmatched;
      continue;
    }
    const double pos = static_cast<double>(t);
    std::optional<std::size_t> hit;
    std::size_t nearest = 0;
    double nearest_gap = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < gt.size(); ++k) {
      const double s = gt.segments[k].start * scale;
      const double e = gt.segments[k].end * scale;
      if (s <= pos && pos <= e) {
        hit = k;
        break;
      }
      const double gap = pos < s ? s - pos : pos - e;
      if (gap < nearest_gap) {
        nearest_gap = gap;
        nearest = k;
      }
    }
    if (!hit) ++out.unmatched;
    const auto& seg = gt.segments[hit.value_or(nearest)];
    target.start_offset = std::max(0.0, pos - seg.start * scale);
    target.end_offset = std::max(0.0, seg.end * scale - pos);
  }
  return out;
}

// ---------------------------------------------------------------------------

/// Turns per-instant predictions into proposals in seconds, clamped to the
/// sample duration. Proposals that collapse or score below the floor are dropped.
inline std::vector<Proposal> decode(const LevelPredictions& preds, std::size_t stride,
                                    double instants_per_second, double duration,
                                    double score_floor = 0.0) {
  std::vector<Proposal> out;
  const double scale = static_cast<double>(stride) / instants_per_second;
  for (std::size_t t = 0; t < preds.size(); ++t) {
    const double score = sigmoid(preds.logits[t]);
    if (score < score_floor) continue;
    const double pos = static_cast<double>(t);
    const double start = std::clamp((pos - preds.start_offsets[t]) * scale, 0.0, duration);
    const double end = std::clamp((pos + preds.end_offsets[t]) * scale, 0.0, duration);
    if (!(end > start)) continue;
    out.push_back({score, start, end});
  }
  return out;
}

}  // namespace unicaclf
