#pragma once

// Corpus-level temporal localization metrics: AP at fixed IoU thresholds
// (pooled ranking, all-points interpolation) and AR over the top-N proposals
// per video averaged over IoU 0.50:0.05:0.95.

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "unicaclf/postprocess.hpp"
#include "unicaclf/types.hpp"

namespace unicaclf {

using PredictionMap = std::map<std::string, std::vector<Proposal>>;
using TruthMap = std::map<std::string, SegmentSet>;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
inline std::vector<double> recall_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(static_cast<double>(50 + 5 * i) / 100.0);
  return t;
}

struct EvalConfig {
  std::vector<double> ap_thresholds{0.5, 0.75, 0.95};
  std::vector<std::size_t> ar_counts{100, 50, 30, 20, 10, 5};
  bool per_video_recall = false;  // mean of per-video recall instead of pooled
  bool reference = false;         // use the brute-force path
};

/// The four-count AR set used by some benchmark tables.
inline std::vector<std::size_t> short_ar_counts() { return {100, 50, 20, 10}; }

struct VideoDiagnostics {
  std::string id;
  std::size_t num_truth = 0;
  std::size_t num_predictions = 0;
  double best_iou_mean = 0.0;  // mean over truth segments of the best IoU of any prediction
};

struct EvalReport {
  std::map<double, double> ap;
  double ap_average = 0.0;
  std::map<std::size_t, double> ar;
  double ar_average = 0.0;
  std::vector<VideoDiagnostics> videos;
};

namespace detail {

struct Ranked {
  const std::string* video;
  Proposal p;
};

inline bool ranked_before(const Ranked& a, const Ranked& b) {
  if (a.p.score != b.p.score) return a.p.score > b.p.score;
  if (*a.video != *b.video) return *a.video < *b.video;
  if (a.p.start != b.p.start) return a.p.start < b.p.start;
  return a.p.end < b.p.end;
}

inline void check_ids(const PredictionMap& preds, const TruthMap& gts) {
  for (const auto& [id, _] : preds)
    if (!gts.contains(id)) throw DataError(id, "prediction for unknown video id");
}

/// Index of the unmatched truth segment with the highest IoU >= threshold,
/// or -1. Ties go to the lower index.
inline int best_match(const Proposal& p, const SegmentSet& gt, const std::vector<char>& used,
                      double threshold) {
  int best = -1;
  double best_iou = -1.0;
  for (std::size_t k = 0; k < gt.size(); ++k) {
    if (used[k]) continue;
    const double iou = iou_1d(p, gt.segments[k]);
    if (iou >= threshold && iou > best_iou) {
      best_iou = iou;
      best = static_cast<int>(k);
    }
  }
  return best;
}

inline std::vector<Proposal> top_n(std::vector<Proposal> props, std::size_t n) {
  std::stable_sort(props.begin(), props.end(), proposal_ranks_before);
  if (props.size() > n) props.resize(n);
  return props;
}

inline std::size_t total_truth(const TruthMap& gts) {
  std::size_t n = 0;
  for (const auto& [_, s] : gts) n += s.size();
  return n;
}

}  // namespace detail

inline double average_precision(const PredictionMap& preds, const TruthMap& gts, double threshold) {
  detail::check_ids(preds, gts);
  std::vector<detail::Ranked> pool;
  for (const auto& [id, props] : preds)
    for (const auto& p : props) pool.push_back({&id, p});
  std::stable_sort(pool.begin(), pool.end(), detail::ranked_before);

  const std::size_t n_truth = detail::total_truth(gts);
  if (pool.empty() || n_truth == 0) return 0.0;

  std::map<std::string, std::vector<char>> used;
  for (const auto& [id, s] : gts) used[id].assign(s.size(), 0);

  std::vector<double> precision(pool.size()), recall(pool.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& r = pool[i];
    auto& u = used[*r.video];
    const int k = detail::best_match(r.p, gts.at(*r.video), u, threshold);
    if (k >= 0) {
      u[static_cast<std::size_t>(k)] = 1;
      ++tp;
    }
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(n_truth);
  }
  for (std::size_t i = pool.size() - 1; i > 0; --i)
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

/// Recall of the top `n_proposals` per video, averaged over the ten IoU thresholds.
inline double average_recall(const PredictionMap& preds, const TruthMap& gts, std::size_t n_proposals,
                             bool per_video = false) {
  detail::check_ids(preds, gts);
  const auto thresholds = recall_thresholds();
  std::map<std::string, std::vector<Proposal>> kept;
  for (const auto& [id, props] : preds) kept[id] = detail::top_n(props, n_proposals);

  double sum = 0.0;
  for (double thr : thresholds) {
    std::size_t matched_all = 0, truth_all = 0, videos = 0;
    double per_video_sum = 0.0;
    for (const auto& [id, gt] : gts) {
      if (gt.empty()) continue;
      std::size_t matched = 0;
      if (auto it = kept.find(id); it != kept.end()) {
        std::vector<char> used(gt.size(), 0);
        for (const auto& p : it->second) {
          const int k = detail::best_match(p, gt, used, thr);
          if (k >= 0) {
            used[static_cast<std::size_t>(k)] = 1;
            ++matched;
          }
        }
      }
      matched_all += matched;
      truth_all += gt.size();
      per_video_sum += static_cast<double>(matched) / static_cast<double>(gt.size());
      ++videos;
    }
    if (truth_all == 0) continue;
    sum += per_video ? per_video_sum / static_cast<double>(videos)
                     : static_cast<double>(matched_all) / static_cast<double>(truth_all);
  }
  return sum / static_cast<double>(thresholds.size());
}

// ---------------------------------------------------------------------------
// Brute-force reference. Replays the greedy matching from scratch for every
// ranking prefix and takes the interpolated precision as an explicit max.

namespace reference {

inline std::size_t prefix_true_positives(const std::vector<detail::Ranked>& ranked, std::size_t len,
                                         const TruthMap& gts, double threshold) {
  std::map<std::string, std::vector<char>> used;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < len; ++i) {
    const auto& gt = gts.at(*ranked[i].video);
    auto& u = used[*ranked[i].video];
    if (u.empty()) u.assign(gt.size(), 0);
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t k = 0; k < gt.size(); ++k) {
      const double iou = iou_1d(ranked[i].p, gt.segments[k]);
      if (!u[k] && iou >= threshold && iou > best_iou) {
        best = static_cast<int>(k);
        best_iou = iou;
      }
    }
    if (best >= 0) {
      u[static_cast<std::size_t>(best)] = 1;
      ++tp;
    }
  }
  return tp;
}

inline double average_precision(const PredictionMap& preds, const TruthMap& gts, double threshold) {
  detail::check_ids(preds, gts);
  std::vector<detail::Ranked> ranked;
  for (const auto& [id, props] : preds)
    for (const auto& p : props) ranked.push_back({&id, p});
  // insertion sort: independent of the fast path's library sort
  for (std::size_t i = 1; i < ranked.size(); ++i)
    for (std::size_t j = i; j > 0 && detail::ranked_before(ranked[j], ranked[j - 1]); --j)
      std::swap(ranked[j], ranked[j - 1]);

  std::size_t n_truth = 0;
  for (const auto& [_, s] : gts) n_truth += s.size();
  if (ranked.empty() || n_truth == 0) return 0.0;

  const std::size_t n = ranked.size();
  std::vector<double> precision(n), recall(n);
  for (std::size_t k = 1; k <= n; ++k) {
    const auto tp = prefix_true_positives(ranked, k, gts, threshold);
    precision[k - 1] = static_cast<double>(tp) / static_cast<double>(k);
    recall[k - 1] = static_cast<double>(tp) / static_cast<double>(n_truth);
  }
  double ap = 0.0;
  double prev = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    double envelope = 0.0;
    for (std::size_t j = k; j < n; ++j) envelope = std::max(envelope, precision[j]);
    ap += (recall[k] - prev) * envelope;
    prev = recall[k];
  }
  return ap;
}

inline double average_recall(const PredictionMap& preds, const TruthMap& gts, std::size_t n_proposals,
                             bool per_video = false) {
  detail::check_ids(preds, gts);
  double sum = 0.0;
  const auto thresholds = recall_thresholds();
  for (double thr : thresholds) {
    std::size_t matched_all = 0, truth_all = 0, videos = 0;
    double per_video_sum = 0.0;
    for (const auto& [id, gt] : gts) {
      if (gt.empty()) continue;
      std::vector<Proposal> props;
      if (auto it = preds.find(id); it != preds.end()) props = it->second;
      // selection of the top n by repeated extraction
      std::vector<Proposal> top;
      std::vector<char> taken(props.size(), 0);
      while (top.size() < n_proposals && top.size() < props.size()) {
        std::size_t best = props.size();
        for (std::size_t i = 0; i < props.size(); ++i)
          if (!taken[i] && (best == props.size() || proposal_ranks_before(props[i], props[best])))
            best = i;
        taken[best] = 1;
        top.push_back(props[best]);
      }
      std::vector<char> used(gt.size(), 0);
      std::size_t matched = 0;
      for (const auto& p : top) {
        int b = -1;
        double bi = -1.0;
        for (std::size_t k = 0; k < gt.size(); ++k) {
          const double iou = iou_1d(p, gt.segments[k]);
          if (!used[k] && iou >= thr && iou > bi) {
            b = static_cast<int>(k);
            bi = iou;
          }
        }
        if (b >= 0) {
          used[static_cast<std::size_t>(b)] = 1;
          ++matched;
        }
      }
      matched_all += matched;
      truth_all += gt.size();
      per_video_sum += static_cast<double>(matched) / static_cast<double>(gt.size());
      ++videos;
    }
    if (truth_all == 0) continue;
    sum += per_video ? per_video_sum / static_cast<double>(videos)
                     : static_cast<double>(matched_all) / static_cast<double>(truth_all);
  }
  return sum / static_cast<double>(thresholds.size());
}

}  // namespace reference

// ---------------------------------------------------------------------------

inline EvalReport evaluate(const PredictionMap& preds, const TruthMap& gts, const EvalConfig& cfg = {}) {
  detail::check_ids(preds, gts);
  EvalReport r;
  for (double thr : cfg.ap_thresholds) {
    r.ap[thr] = cfg.reference ? reference::average_precision(preds, gts, thr)
                              : average_precision(preds, gts, thr);
    r.ap_average += r.ap[thr];
  }
  if (!r.ap.empty()) r.ap_average /= static_cast<double>(r.ap.size());
  for (std::size_t n : cfg.ar_counts) {
    r.ar[n] = cfg.reference ? reference::average_recall(preds, gts, n, cfg.per_video_recall)
                            : average_recall(preds, gts, n, cfg.per_video_recall);
    r.ar_average += r.ar[n];
  }
  if (!r.ar.empty()) r.ar_average /= static_cast<double>(r.ar.size());

  for (const auto& [id, gt] : gts) {
    VideoDiagnostics d{id, gt.size(), 0, 0.0};
    if (auto it = preds.find(id); it != preds.end()) d.num_predictions = it->second.size();
    if (!gt.empty()) {
      for (const auto& seg : gt.segments) {
        double best = 0.0;
        if (auto it = preds.find(id); it != preds.end())
          for (const auto& p : it->second) best = std::max(best, iou_1d(p, seg));
        d.best_iou_mean += best;
      }
      d.best_iou_mean /= static_cast<double>(gt.size());
    }
    r.videos.push_back(std::move(d));
  }
  return r;
}

}  // namespace unicaclf
