#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "unicaclf/types.hpp"

namespace unicaclf {

inline double iou_1d(double a_start, double a_end, double b_start, double b_end) {
  const double inter = std::max(0.0, std::min(a_end, b_end) - std::max(a_start, b_start));
  const double uni = (a_end - a_start) + (b_end - b_start) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline double iou_1d(const Segment& a, const Segment& b) { return iou_1d(a.start, a.end, b.start, b.end); }
inline double iou_1d(const Proposal& a, const Proposal& b) { return iou_1d(a.start, a.end, b.start, b.end); }
inline double iou_1d(const Proposal& a, const Segment& b) { return iou_1d(a.start, a.end, b.start, b.end); }

struct SuppressionConfig {
  double sigma = 0.5;
  double score_floor = 0.001;
  std::size_t max_kept = 100;
};

/// Higher score first; ties go to the earlier start, then the shorter segment.
inline bool proposal_ranks_before(const Proposal& a, const Proposal& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.start != b.start) return a.start < b.start;
  return (a.end - a.start) < (b.end - b.start);
}

/// Gaussian Soft-NMS: repeatedly keep the best remaining proposal and decay
/// every other remaining score by exp(-IoU^2 / sigma).
inline std::vector<Proposal> soft_nms(std::vector<Proposal> pool, const SuppressionConfig& cfg) {
  std::vector<Proposal> kept;
  pool.erase(std::remove_if(pool.begin(), pool.end(),
                            [&](const Proposal& p) { return p.score < cfg.score_floor; }),
             pool.end());
  while (!pool.empty() && kept.size() < cfg.max_kept) {
    auto best = std::min_element(pool.begin(), pool.end(), proposal_ranks_before);
    const Proposal top = *best;
    pool.erase(best);
    kept.push_back(top);
    for (auto& p : pool) {
      const double iou = iou_1d(top, p);
      p.score *= std::exp(-(iou * iou) / cfg.sigma);
    }
    pool.erase(std::remove_if(pool.begin(), pool.end(),
                              [&](const Proposal& p) { return p.score < cfg.score_floor; }),
               pool.end());
  }
  std::stable_sort(kept.begin(), kept.end(), proposal_ranks_before);
  return kept;
}

}  // namespace unicaclf
