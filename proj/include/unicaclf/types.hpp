#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "unicaclf/tensor.hpp"

namespace unicaclf {

// ---------------------------------------------------------------------------
// Errors. The CLI maps each type to a distinct exit code.

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MissingFileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid sample data; `sample_id` names the offender when known.
struct DataError : std::runtime_error {
  DataError(std::string id, const std::string& what)
      : std::runtime_error(id.empty() ? what : "sample '" + id + "': " + what),
        sample_id(std::move(id)) {}
  std::string sample_id;
};

// ---------------------------------------------------------------------------
// Domain types

/// One sample's T×C instant-feature matrix plus timing metadata.
struct FeatureSequence {
  std::string id;
  Matrix features;
  double instants_per_second = 1.0;
  double duration_seconds = 0.0;

  std::size_t num_instants() const noexcept { return features.rows(); }
  std::size_t dim() const noexcept { return features.cols(); }
};

struct Segment {
  double start = 0.0;
  double end = 0.0;
  double length() const noexcept { return end - start; }
  bool operator==(const Segment&) const = default;
};

/// Ground-truth forged intervals in seconds.
struct SegmentSet {
  std::vector<Segment> segments;
  bool empty() const noexcept { return segments.empty(); }
  std::size_t size() const noexcept { return segments.size(); }
  bool operator==(const SegmentSet&) const = default;
};

/// Per-level binary instant labels; 1 marks a forged instant.
struct InstantMask {
  int level = 1;
  std::vector<std::uint8_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t count_forged() const noexcept {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
  }
};

struct PyramidLevel {
  int level = 1;
  Matrix features;
  Vector context;
  std::size_t stride = 1;
};

struct Proposal {
  double score = 0.0;
  double start = 0.0;
  double end = 0.0;
  bool operator==(const Proposal&) const = default;
};

struct Sample {
  FeatureSequence sequence;
  SegmentSet truth;
};

enum class PyramidVariant { kCap, kConvBaseline };

/// All hyperparameters. Field names match the JSON config keys.
struct ModelConfig {
  std::size_t input_dim = 16;
  std::size_t embed_dim = 32;  // hidden width of the detection heads
  int num_levels = 6;
  double temperature = 0.1;
  double phi1 = 2.0;
  double phi2 = 0.5;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double softnms_sigma = 0.5;
  double score_floor = 0.001;
  std::size_t max_kept = 100;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t batch_size = 8;
  int epochs = 20;
  std::uint64_t seed = 0;
  double forged_threshold = 0.4;
  int early_stop_window = 0;  // 0 disables early stopping
  std::size_t threads = 1;
  PyramidVariant variant = PyramidVariant::kCap;

  void validate() const {
    auto require = [](bool ok, const char* what) {
      if (!ok) throw ConfigError(std::string("invalid config: ") + what);
    };
    require(input_dim >= 1, "input_dim must be >= 1");
    require(embed_dim >= 1, "embed_dim must be >= 1");
    require(num_levels >= 1, "num_levels must be >= 1");
    require(temperature > 0.0, "temperature must be > 0");
    require(phi1 >= 0.0 && phi2 >= 0.0, "phi1 and phi2 must be >= 0");
    require(focal_gamma >= 0.0, "focal_gamma must be >= 0");
    require(focal_alpha >= 0.0 && focal_alpha <= 1.0, "focal_alpha must be in [0,1]");
    require(softnms_sigma > 0.0, "softnms_sigma must be > 0");
    require(score_floor > 0.0 && score_floor < 1.0, "score_floor must be in (0,1)");
    require(max_kept >= 1, "max_kept must be >= 1");
    require(learning_rate >= 0.0, "learning_rate must be >= 0");
    require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1 must be in [0,1)");
    require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2 must be in [0,1)");
    require(adam_epsilon > 0.0, "adam_epsilon must be > 0");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(epochs >= 0, "epochs must be >= 0");
    require(forged_threshold > 0.0 && forged_threshold < 1.0,
            "forged_threshold must be in (0,1)");
    require(early_stop_window >= 0, "early_stop_window must be >= 0");
    require(threads >= 1, "threads must be >= 1");
  }
};

// ---------------------------------------------------------------------------

/// Sorts by start and replaces overlapping segments with their union.
inline SegmentSet merge_segments(SegmentSet set) {
  auto& s = set.segments;
  std::sort(s.begin(), s.end(), [](const Segment& a, const Segment& b) {
    return a.start < b.start || (a.start == b.start && a.end < b.end);
  });
  std::vector<Segment> merged;
  for (const auto& seg : s) {
    if (!merged.empty() && seg.start < merged.back().end) {
      merged.back().end = std::max(merged.back().end, seg.end);
    } else {
      merged.push_back(seg);
    }
  }
  s = std::move(merged);
  return set;
}

/// Returns every violated invariant as a human-readable line; empty when valid.
inline std::vector<std::string> validate_sample(const FeatureSequence& seq, const SegmentSet& gt) {
  std::vector<std::string> report;
  const auto t = seq.features.rows();
  const auto c = seq.features.cols();
  if (t < 1) report.emplace_back("T >= 1 violated");
  if (c < 1) report.emplace_back("C >= 1 violated");
  if (!all_finite(seq.features.data())) report.emplace_back("non-finite feature");
  const double ips = seq.instants_per_second;
  if (!(ips > 0.0) || !std::isfinite(ips)) {
    report.emplace_back("instants_per_second > 0 violated");
  } else if (!(seq.duration_seconds > 0.0) || !std::isfinite(seq.duration_seconds)) {
    report.emplace_back("duration_seconds > 0 violated");
  } else if (std::abs(seq.duration_seconds - static_cast<double>(t) / ips) > 1.0 / ips) {
    report.emplace_back("duration inconsistent with T / instants_per_second");
  }
  for (std::size_t k = 0; k < gt.segments.size(); ++k) {
    const auto& s = gt.segments[k];
    const std::string tag = "segment " + std::to_string(k) + ": ";
    if (!std::isfinite(s.start) || !std::isfinite(s.end)) {
      report.push_back(tag + "non-finite boundary");
      continue;
    }
    if (!(s.start < s.end)) report.push_back(tag + "start < end violated");
    if (s.start < 0.0) report.push_back(tag + "start >= 0 violated");
    if (s.end > seq.duration_seconds) report.push_back(tag + "end <= duration violated");
    if (k > 0) {
      const auto& prev = gt.segments[k - 1];
      if (s.start < prev.start) report.push_back(tag + "segments not sorted by start");
      if (s.start < prev.end) report.push_back(tag + "segments overlap");
    }
  }
  return report;
}

}  // namespace unicaclf
