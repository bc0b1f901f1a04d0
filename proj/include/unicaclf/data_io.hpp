#pragma once

// Instant labels, dataset manifests with raw float32 feature files, and the
// seeded planted-anomaly generator.

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "unicaclf/rng.hpp"
#include "unicaclf/types.hpp"

namespace unicaclf {

namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr int kManifestVersion = 1;

// ---------------------------------------------------------------------------
// Labels

/// Instant t is forged iff its center time (t + 0.5) / ips lies in a segment.
inline InstantMask rasterize_labels(const SegmentSet& gt, std::size_t num_instants,
                                    double instants_per_second) {
  InstantMask m{1, std::vector<std::uint8_t>(num_instants, 0)};
  for (std::size_t t = 0; t < num_instants; ++t) {
    const double center = (static_cast<double>(t) + 0.5) / instants_per_second;
    for (const auto& s : gt.segments) {
      if (s.start <= center && center <= s.end) {
        m.labels[t] = 1;
        break;
      }
    }
  }
  return m;
}

/// Pools windows of 2 (ragged tail allowed); a window is forged iff its
/// forged fraction is strictly above `threshold`.
inline InstantMask downsample_mask(const InstantMask& mask, double threshold = 0.4) {
  const std::size_t n = mask.size();
  InstantMask out{mask.level + 1, std::vector<std::uint8_t>((n + 1) / 2, 0)};
  for (std::size_t t = 0; t < out.size(); ++t) {
    const std::size_t a = 2 * t;
    const std::size_t width = a + 1 < n ? 2 : 1;
    std::size_t forged = mask.labels[a];
    if (width == 2) forged += mask.labels[a + 1];
    out.labels[t] = static_cast<double>(forged) / static_cast<double>(width) > threshold ? 1 : 0;
  }
  return out;
}

inline std::vector<InstantMask> level_masks(const SegmentSet& gt, std::size_t num_instants,
                                            double instants_per_second, int num_levels,
                                            double threshold) {
  std::vector<InstantMask> masks;
  masks.push_back(rasterize_labels(gt, num_instants, instants_per_second));
  for (int l = 1; l < num_levels; ++l) masks.push_back(downsample_mask(masks.back(), threshold));
  return masks;
}

// ---------------------------------------------------------------------------
// Feature files: headerless row-major float32 little-endian

inline void write_feature_file(const fs::path& path, const Matrix& features) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  std::vector<char> bytes(features.data().size() * 4);
  for (std::size_t i = 0; i < features.data().size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(features.data()[i]));
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
  }
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

inline Matrix read_feature_file(const fs::path& path, const std::string& id, std::size_t rows,
                                std::size_t cols) {
  if (!fs::exists(path)) throw DataError(id, "feature file not found: " + path.string());
  const auto expected = rows * cols * 4;
  const auto actual = fs::file_size(path);
  if (actual != expected)
    throw DataError(id, "feature file size " + std::to_string(actual) + " bytes, expected " +
                            std::to_string(expected));
  std::ifstream is(path, std::ios::binary);
  std::vector<unsigned char> bytes(expected);
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(expected));
  if (!is) throw DataError(id, "short read on feature file");
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows * cols; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
    const float f = std::bit_cast<float>(bits);
    if (!std::isfinite(f)) throw DataError(id, "non-finite feature value");
    m.data()[i] = static_cast<double>(f);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Manifest

inline fs::path feature_relpath(const std::string& id) { return fs::path("features") / (id + ".f32"); }

/// Writes `manifest.json` plus one feature file per sample under `dir`.
inline fs::path save_dataset(const fs::path& dir, const std::vector<Sample>& samples) {
  fs::create_directories(dir / "features");
  json manifest;
  manifest["version"] = kManifestVersion;
  manifest["samples"] = json::array();
  for (const auto& s : samples) {
    const auto rel = feature_relpath(s.sequence.id);
    write_feature_file(dir / rel, s.sequence.features);
    json segs = json::array();
    for (const auto& seg : s.truth.segments) segs.push_back({seg.start, seg.end});
    manifest["samples"].push_back({{"id", s.sequence.id},
                                   {"feature_file", rel.generic_string()},
                                   {"num_instants", s.sequence.num_instants()},
                                   {"feature_dim", s.sequence.dim()},
                                   {"instants_per_second", s.sequence.instants_per_second},
                                   {"duration_seconds", s.sequence.duration_seconds},
                                   {"fake_segments", segs}});
  }
  const auto path = dir / "manifest.json";
  std::ofstream os(path);
  os << manifest.dump(2) << '\n';
  if (!os) throw std::runtime_error("cannot write manifest: " + path.string());
  return path;
}

inline const json& require_field(const json& obj, const char* key, const std::string& id) {
  if (!obj.is_object() || !obj.contains(key))
    throw DataError(id, std::string("manifest schema: missing field '") + key + "'");
  return obj.at(key);
}

inline std::vector<Sample> load_dataset(const fs::path& manifest_path) {
  if (!fs::exists(manifest_path)) throw MissingFileError("manifest not found: " + manifest_path.string());
  json manifest;
  try {
    std::ifstream is(manifest_path);
    manifest = json::parse(is);
  } catch (const json::exception& e) {
    throw DataError("", std::string("manifest is not valid JSON: ") + e.what());
  }
  const auto& version = require_field(manifest, "version", "");
  if (!version.is_number_integer() || version.get<int>() != kManifestVersion)
    throw DataError("", "manifest schema: unsupported version");
  const auto& list = require_field(manifest, "samples", "");
  if (!list.is_array()) throw DataError("", "manifest schema: 'samples' must be an array");

  const auto base = manifest_path.parent_path();
  std::vector<Sample> out;
  std::set<std::string> seen;
  for (const auto& entry : list) {
    const auto& id_field = require_field(entry, "id", "");
    if (!id_field.is_string()) throw DataError("", "manifest schema: 'id' must be a string");
    const auto id = id_field.get<std::string>();
    if (!seen.insert(id).second) throw DataError(id, "duplicate sample id");
    try {
      const auto file = require_field(entry, "feature_file", id).get<std::string>();
      const auto rows = require_field(entry, "num_instants", id).get<std::size_t>();
      const auto cols = require_field(entry, "feature_dim", id).get<std::size_t>();
      const auto ips = require_field(entry, "instants_per_second", id).get<double>();
      const auto duration = require_field(entry, "duration_seconds", id).get<double>();
      SegmentSet gt;
      for (const auto& seg : require_field(entry, "fake_segments", id)) {
        if (!seg.is_array() || seg.size() != 2) throw DataError(id, "segment must be [start, end]");
        gt.segments.push_back({seg[0].get<double>(), seg[1].get<double>()});
      }
      if (rows < 1 || cols < 1) throw DataError(id, "num_instants and feature_dim must be >= 1");
      for (const auto& seg : gt.segments)
        if (!(seg.start < seg.end)) throw DataError(id, "segment start < end violated");
      gt = merge_segments(std::move(gt));
      Sample s{FeatureSequence{id, read_feature_file(base / file, id, rows, cols), ips, duration},
               std::move(gt)};
      if (auto issues = validate_sample(s.sequence, s.truth); !issues.empty())
        throw DataError(id, issues.front());
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw DataError(id, std::string("manifest schema: ") + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic planted-anomaly data

struct SynthConfig {
  std::size_t num_samples = 200;
  std::size_t min_instants = 64;
  std::size_t max_instants = 64;
  std::size_t feature_dim = 16;
  double instants_per_second = 4.0;
  double forged_fraction = 0.7;  // exact share of samples with planted segments
  std::size_t min_segments = 1;
  std::size_t max_segments = 1;
  double min_segment_fraction = 0.1;  // of T
  double max_segment_fraction = 0.4;
  double anomaly_shift = 1.0;  // epsilon
  double noise_scale = 0.3;
  double context_scale = 1.0;
  double context_offset = 0.0;  // every context coordinate is drawn around this value
  // 0: isotropic anomaly direction; 1: exactly opposite the context.
  double context_opposition = 0.0;
  std::uint64_t seed = 0;
  std::string id_prefix = "synth";

  void validate() const {
    auto require = [](bool ok, const char* what) {
      if (!ok) throw ConfigError(std::string("invalid synth config: ") + what);
    };
    require(num_samples >= 1, "num_samples must be >= 1");
    require(min_instants >= 1 && min_instants <= max_instants, "instant range invalid");
    require(feature_dim >= 1, "feature_dim must be >= 1");
    require(instants_per_second > 0.0, "instants_per_second must be > 0");
    require(forged_fraction > 0.0 && forged_fraction <= 1.0, "forged_fraction must be in (0,1]");
    require(min_segments >= 1 && min_segments <= max_segments, "segment count range invalid");
    require(min_segment_fraction > 0.0 && min_segment_fraction <= max_segment_fraction &&
                max_segment_fraction <= 1.0,
            "segment length range invalid");
    require(anomaly_shift >= 0.0, "anomaly_shift must be >= 0");
    require(noise_scale > 0.0, "noise_scale must be > 0");
    require(context_scale > 0.0, "context_scale must be > 0");
    require(context_opposition >= 0.0 && context_opposition <= 1.0, "context_opposition must be in [0,1]");
  }

  std::size_t forged_count() const {
    return static_cast<std::size_t>(std::llround(forged_fraction * static_cast<double>(num_samples)));
  }
};

/// Planted segment lengths in instants for a sequence of length T.
inline std::pair<std::size_t, std::size_t> segment_length_range(const SynthConfig& cfg, std::size_t t) {
  const auto td = static_cast<double>(t);
  const auto lo = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg.min_segment_fraction * td)));
  const auto hi = std::max(lo, static_cast<std::size_t>(std::floor(cfg.max_segment_fraction * td)));
  return {lo, std::min(hi, t)};
}

inline std::string synth_id(const SynthConfig& cfg, std::size_t i) {
  std::ostringstream os;
  os << cfg.id_prefix << '_' << std::setw(5) << std::setfill('0') << i;
  return os.str();
}

inline double to_float_precision(double v) { return static_cast<double>(static_cast<float>(v)); }

/// Each sample: a latent context vector (context_offset plus a Gaussian
/// deviation), genuine instants = context + noise, and for forged samples
/// non-overlapping segments shifted by anomaly_shift along one unit direction
/// per sample. The direction blends a random draw with the negated deviation
/// according to context_opposition. Values are rounded to float32 so a
/// save/load round trip is exact.
inline std::vector<Sample> generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(cfg.num_samples);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<char> forged(cfg.num_samples, 0);
  for (std::size_t i = 0; i < cfg.forged_count(); ++i) forged[order[i]] = 1;

  constexpr int kMaxRetries = 1000;
  std::vector<Sample> out;
  out.reserve(cfg.num_samples);
  for (std::size_t i = 0; i < cfg.num_samples; ++i) {
    const auto t_len = static_cast<std::size_t>(rng.uniform_int(
        static_cast<std::int64_t>(cfg.min_instants), static_cast<std::int64_t>(cfg.max_instants)));
    const std::size_t c = cfg.feature_dim;

    Vector context(c), direction(c);
    for (auto& v : context) v = rng.normal(0.0, cfg.context_scale);  // deviation from the shared mean
    for (auto& v : direction) v = rng.normal();
    const double dn = norm(direction);
    const double cn = norm(context);
    for (std::size_t j = 0; j < c; ++j)
      direction[j] = (1.0 - cfg.context_opposition) * direction[j] / dn -
                     cfg.context_opposition * context[j] / cn;
    const double mixed = norm(direction);
    if (!(mixed > 0.0)) throw ConfigError("synth: degenerate anomaly direction in sample " + synth_id(cfg, i));
    for (auto& v : direction) v /= mixed;
    for (auto& v : context) v += cfg.context_offset;

    std::vector<std::pair<std::size_t, std::size_t>> spans;  // [begin, end) in instants
    if (forged[i]) {
      const auto count = static_cast<std::size_t>(rng.uniform_int(
          static_cast<std::int64_t>(cfg.min_segments), static_cast<std::int64_t>(cfg.max_segments)));
      const auto [lo, hi] = segment_length_range(cfg, t_len);
      for (std::size_t k = 0; k < count; ++k) {
        bool placed = false;
        for (int attempt = 0; attempt < kMaxRetries && !placed; ++attempt) {
          const auto len = static_cast<std::size_t>(
              rng.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
          const auto begin = static_cast<std::size_t>(
              rng.uniform_int(0, static_cast<std::int64_t>(t_len - len)));
          const auto end = begin + len;
          bool clear = true;
          for (const auto& [b, e] : spans)  // keep at least one genuine instant between segments
            if (begin <= e && b <= end) clear = false;
          if (clear) {
            spans.emplace_back(begin, end);
            placed = true;
          }
        }
        if (!placed)
          throw ConfigError("synth: could not place " + std::to_string(count) +
                            " non-overlapping segments in sample " + synth_id(cfg, i));
      }
      std::sort(spans.begin(), spans.end());
    }

    Matrix features(t_len, c);
    for (std::size_t t = 0; t < t_len; ++t) {
      bool inside = false;
      for (const auto& [b, e] : spans) inside = inside || (t >= b && t < e);
      for (std::size_t j = 0; j < c; ++j) {
        double v = context[j] + cfg.noise_scale * rng.normal();
        if (inside) v += cfg.anomaly_shift * direction[j];
        features(t, j) = to_float_precision(v);
      }
    }
    SegmentSet gt;
    for (const auto& [b, e] : spans)
      gt.segments.push_back({static_cast<double>(b) / cfg.instants_per_second,
                             static_cast<double>(e) / cfg.instants_per_second});
    out.push_back({FeatureSequence{synth_id(cfg, i), std::move(features), cfg.instants_per_second,
                                   static_cast<double>(t_len) / cfg.instants_per_second},
                   std::move(gt)});
  }
  return out;
}

}  // namespace unicaclf
