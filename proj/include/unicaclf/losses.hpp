#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "unicaclf/tensor.hpp"
#include "unicaclf/types.hpp"

namespace unicaclf {

constexpr double kProbClamp = 1e-12;

// ---------------------------------------------------------------------------
// Focal loss

struct FocalTerm {
  double loss = 0.0;
  double d_logit = 0.0;
};

/// Binary focal loss of a single instant and its derivative w.r.t. the logit.
inline FocalTerm focal_term(double logit, bool positive, double gamma, double alpha) {
  const double raw = sigmoid(logit);
  const bool clamped = raw < kProbClamp || raw > 1.0 - kProbClamp;
  const double p = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
  FocalTerm r;
  if (positive) {
    const double w = std::pow(1.0 - p, gamma);
    r.loss = -alpha * w * std::log(p);
    if (!clamped) r.d_logit = alpha * w * (gamma * p * std::log(p) - (1.0 - p));
  } else {
    const double w = std::pow(p, gamma);
    r.loss = -(1.0 - alpha) * w * std::log(1.0 - p);
    if (!clamped) r.d_logit = (1.0 - alpha) * w * (p - gamma * (1.0 - p) * std::log(1.0 - p));
  }
  return r;
}

/// Mean binary focal loss over all instants.
inline double focal_loss(std::span<const double> logits, std::span<const std::uint8_t> labels,
                         double gamma, double alpha) {
  if (logits.size() != labels.size()) throw std::invalid_argument("focal_loss: length mismatch");
  if (logits.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    s += focal_term(logits[i], labels[i] != 0, gamma, alpha).loss;
  return s / static_cast<double>(logits.size());
}

// ---------------------------------------------------------------------------
// Distance-IoU loss on 1-D intervals

struct Interval {
  double start = 0.0;
  double end = 0.0;
};

struct DiouTerm {
  double loss = 0.0;
  double d_start = 0.0;  // w.r.t. predicted start
  double d_end = 0.0;    // w.r.t. predicted end
};

inline DiouTerm diou_term(Interval pred, Interval target) {
  const double lo = std::max(pred.start, target.start);
  const double hi = std::min(pred.end, target.end);
  const double inter = std::max(0.0, hi - lo);
  const double len_p = pred.end - pred.start;
  const double len_t = target.end - target.start;
  const double uni = len_p + len_t - inter;
  const double enc_lo = std::min(pred.start, target.start);
  const double enc_hi = std::max(pred.end, target.end);
  const double enclose = enc_hi - enc_lo;
  const double dc = 0.5 * (pred.start + pred.end) - 0.5 * (target.start + target.end);

  DiouTerm r;
  const double iou = uni > 0.0 ? inter / uni : 0.0;
  const double dist = enclose > 0.0 ? dc * dc / (enclose * enclose) : 0.0;
  r.loss = 1.0 - iou + dist;

  if (uni > 0.0) {
    // d inter / d start, d end of the prediction
    double di_s = 0.0, di_e = 0.0;
    if (hi - lo > 0.0) {
      di_s = pred.start > target.start ? -1.0 : 0.0;
      di_e = pred.end < target.end ? 1.0 : 0.0;
    }
    const double du_s = -1.0 - di_s;
    const double du_e = 1.0 - di_e;
    r.d_start -= (di_s * uni - inter * du_s) / (uni * uni);
    r.d_end -= (di_e * uni - inter * du_e) / (uni * uni);
  }
  if (enclose > 0.0) {
    const double de_s = pred.start < target.start ? -1.0 : 0.0;
    const double de_e = pred.end > target.end ? 1.0 : 0.0;
    const double e2 = enclose * enclose;
    // d(dc^2/E^2) = 2 dc ddc / E^2 - 2 dc^2 dE / E^3, with ddc = 1/2
    r.d_start += dc / e2 - 2.0 * dc * dc * de_s / (e2 * enclose);
    r.d_end += dc / e2 - 2.0 * dc * dc * de_e / (e2 * enclose);
  }
  return r;
}

/// Mean DIoU loss over pairs; 0 for no pairs.
inline double diou_loss(std::span<const Interval> pred, std::span<const Interval> target) {
  if (pred.size() != target.size()) throw std::invalid_argument("diou_loss: count mismatch");
  if (pred.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += diou_term(pred[i], target[i]).loss;
  return s / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// Context-aware contrastive loss

struct CaclResult {
  double loss = 0.0;
  bool skipped = false;
  std::size_t genuine = 0;  // J
  std::size_t forged = 0;   // K
  Vector d_similarity;      // per instant
};

/// -log(A / (A + B)), A = mean_j exp(s_j / tau) over genuine instants,
/// B = sum_k exp(s_k / tau) over forged instants. Labels: 1 = forged.
inline CaclResult cacl_from_similarities(std::span<const double> similarity,
                                         std::span<const std::uint8_t> labels, double tau) {
  if (similarity.size() != labels.size()) throw std::invalid_argument("cacl: length mismatch");
  if (!(tau > 0.0)) throw std::invalid_argument("cacl: temperature must be positive");
  CaclResult r;
  r.d_similarity.assign(similarity.size(), 0.0);
  for (auto y : labels) (y ? r.forged : r.genuine)++;
  if (r.forged == 0 || r.genuine == 0) {
    r.skipped = true;
    return r;
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (double s : similarity) mx = std::max(mx, s / tau);
  const double inv_j = 1.0 / static_cast<double>(r.genuine);
  double a = 0.0, b = 0.0;
  Vector w(similarity.size());
  for (std::size_t t = 0; t < similarity.size(); ++t) {
    const double e = std::exp(similarity[t] / tau - mx);
    if (labels[t]) {
      w[t] = e;
      b += e;
    } else {
      w[t] = inv_j * e;
      a += w[t];
    }
  }
  // log(A + B) - log(A), kept accurate when B << A
  r.loss = std::log1p(b / a);
  for (std::size_t t = 0; t < similarity.size(); ++t) {
    double d_e = w[t] / (a + b);
    if (!labels[t]) d_e -= w[t] / a;
    r.d_similarity[t] = d_e / tau;
  }
  return r;
}

struct CaclIntra {
  CaclResult terms;
  Vector d_context;
  Matrix d_features;
};

/// Per-sample contrastive loss between the context and unit-normalized instants.
inline CaclIntra cacl_intra_with_grad(std::span<const double> context, const Matrix& features,
                                      const InstantMask& mask, double tau) {
  if (mask.size() != features.rows()) throw std::invalid_argument("cacl_intra: mask length mismatch");
  if (context.size() != features.cols())
    throw std::invalid_argument("cacl_intra: context dimension mismatch");
  Vector sim(features.rows());
  for (std::size_t t = 0; t < features.rows(); ++t) sim[t] = cosine(context, features.row(t));
  CaclIntra r{cacl_from_similarities(sim, mask.labels, tau), Vector(context.size(), 0.0),
              Matrix(features.rows(), features.cols())};
  if (r.terms.skipped) return r;
  for (std::size_t t = 0; t < features.rows(); ++t)
    cosine_backward(context, features.row(t), r.terms.d_similarity[t], r.d_context,
                    r.d_features.row(t));
  return r;
}

inline CaclResult cacl_intra(std::span<const double> context, const Matrix& features,
                             const InstantMask& mask, double tau) {
  return cacl_intra_with_grad(context, features, mask, tau).terms;
}

struct CaclSampleInput {
  Vector context;
  Matrix features;
  InstantMask mask;
};

/// Mean of per-sample losses over samples that are not skipped. Each term
/// only ever sees instants of its own sample.
inline double cacl_batch(std::span<const CaclSampleInput> samples, double tau) {
  if (samples.empty()) throw std::invalid_argument("cacl_batch: empty batch");
  double s = 0.0;
  std::size_t used = 0;
  for (const auto& smp : samples) {
    auto r = cacl_intra(smp.context, smp.features, smp.mask, tau);
    if (r.skipped) continue;
    s += r.loss;
    ++used;
  }
  return used ? s / static_cast<double>(used) : 0.0;
}

// ---------------------------------------------------------------------------

struct LossBreakdown {
  double cls = 0.0;
  double reg = 0.0;
  double cacl = 0.0;
  double total = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t cacl_used = 0;  // samples contributing to the contrastive mean
};

inline LossBreakdown total_loss(double cls, double reg, double cacl, double phi1, double phi2) {
  LossBreakdown b;
  b.cls = cls;
  b.reg = reg;
  b.cacl = cacl;
  b.total = cls + phi1 * reg + phi2 * cacl;
  return b;
}

}  // namespace unicaclf
