#include <gtest/gtest.h>

#include <fstream>

#include "oracles.hpp"

using namespace unicaclf;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("unicaclf_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

SynthConfig small_synth(std::uint64_t seed) {
  SynthConfig c;
  c.num_samples = 12;
  c.min_instants = 20;
  c.max_instants = 40;
  c.feature_dim = 5;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(RasterizeLabels, CenterInsideSegment) {
  EXPECT_EQ(rasterize_labels({{{1.0, 2.0}}}, 4, 1.0).labels, (std::vector<std::uint8_t>{0, 1, 0, 0}));
}

TEST(RasterizeLabels, EmptyAndFull) {
  EXPECT_EQ(rasterize_labels({}, 5, 2.0).count_forged(), 0u);
  EXPECT_EQ(rasterize_labels({{{0.0, 2.5}}}, 5, 2.0).count_forged(), 5u);
}

TEST(DownsampleMask, Rules) {
  EXPECT_EQ(downsample_mask({1, {1, 0}}, 0.4).labels, (std::vector<std::uint8_t>{1}));
  EXPECT_EQ(downsample_mask({1, {0, 0}}, 0.4).labels, (std::vector<std::uint8_t>{0}));
  EXPECT_EQ(downsample_mask({1, {0, 0, 1}}, 0.4).labels, (std::vector<std::uint8_t>{0, 1}));
  EXPECT_EQ(downsample_mask({1, {1, 0}}, 0.5).labels, (std::vector<std::uint8_t>{0}));  // strict
  EXPECT_EQ(downsample_mask({2, {1, 0}}, 0.4).level, 3);
}

TEST(DownsampleMask, LengthMatchesPyramidSchedule) {
  for (std::size_t t = 1; t <= 100; ++t) {
    const auto masks = level_masks({}, t, 1.0, 6, 0.4);
    for (std::size_t l = 0; l < masks.size(); ++l) {
      const std::size_t s = std::size_t{1} << l;
      EXPECT_EQ(masks[l].size(), (t + s - 1) / s);
    }
  }
}

TEST(Dataset, RoundTripIsBitIdentical) {
  const auto dir = scratch("roundtrip");
  const auto data = generate_synthetic(small_synth(3));
  save_dataset(dir, data);
  const auto back = load_dataset(dir / "manifest.json");
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(back[i].sequence.id, data[i].sequence.id);
    EXPECT_EQ(back[i].sequence.features, data[i].sequence.features);
    EXPECT_EQ(back[i].truth, data[i].truth);
    EXPECT_EQ(back[i].sequence.instants_per_second, data[i].sequence.instants_per_second);
    EXPECT_EQ(back[i].sequence.duration_seconds, data[i].sequence.duration_seconds);
  }
  fs::remove_all(dir);
}

TEST(Dataset, TruncatedFeatureFileNamesSample) {
  const auto dir = scratch("truncated");
  const auto data = generate_synthetic(small_synth(4));
  save_dataset(dir, data);
  const auto victim = dir / feature_relpath(data[2].sequence.id);
  fs::resize_file(victim, fs::file_size(victim) - 4);
  try {
    load_dataset(dir / "manifest.json");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_EQ(e.sample_id, data[2].sequence.id);
    EXPECT_NE(std::string(e.what()).find(data[2].sequence.id), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(Dataset, MissingFeatureFile) {
  const auto dir = scratch("missing");
  const auto data = generate_synthetic(small_synth(5));
  save_dataset(dir, data);
  fs::remove(dir / feature_relpath(data[0].sequence.id));
  EXPECT_THROW(load_dataset(dir / "manifest.json"), DataError);
  EXPECT_THROW(load_dataset(dir / "nope.json"), MissingFileError);
  fs::remove_all(dir);
}

TEST(Dataset, SchemaErrors) {
  const auto dir = scratch("schema");
  fs::create_directories(dir);
  auto write = [&](const std::string& text) {
    std::ofstream(dir / "manifest.json") << text;
    return dir / "manifest.json";
  };
  EXPECT_THROW(load_dataset(write("{not json")), DataError);
  EXPECT_THROW(load_dataset(write(R"({"samples": []})")), DataError);
  EXPECT_THROW(load_dataset(write(R"({"version": 99, "samples": []})")), DataError);
  EXPECT_THROW(load_dataset(write(R"({"version": 1, "samples": [{"id": "x"}]})")), DataError);
  EXPECT_TRUE(load_dataset(write(R"({"version": 1, "samples": []})")).empty());
  fs::remove_all(dir);
}

TEST(Dataset, OverlappingSegmentsMergedAtLoad) {
  const auto dir = scratch("merge");
  auto data = generate_synthetic(small_synth(6));
  data.resize(1);
  save_dataset(dir, data);
  auto manifest = read_json_file(dir / "manifest.json");
  manifest["samples"][0]["fake_segments"] = json::array({json::array({1.0, 2.0}), json::array({0.5, 1.5})});
  write_text_file(dir / "manifest.json", manifest.dump());
  const auto back = load_dataset(dir / "manifest.json");
  ASSERT_EQ(back[0].truth.size(), 1u);
  EXPECT_EQ(back[0].truth.segments[0], (Segment{0.5, 2.0}));
  fs::remove_all(dir);
}

TEST(Synthetic, SameSeedSameBytes) {
  const auto a = scratch("det_a"), b = scratch("det_b");
  save_dataset(a, generate_synthetic(small_synth(9)));
  save_dataset(b, generate_synthetic(small_synth(9)));
  EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));
  for (const auto& e : fs::directory_iterator(a / "features"))
    EXPECT_EQ(slurp(e.path()), slurp(b / "features" / e.path().filename()));
  const auto other = generate_synthetic(small_synth(10));
  EXPECT_NE(other[0].sequence.features, generate_synthetic(small_synth(9))[0].sequence.features);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Synthetic, ZeroShiftIsNullCase) {
  auto cfg = small_synth(12);
  cfg.num_samples = 60;
  cfg.forged_fraction = 1.0;
  cfg.anomaly_shift = 0.0;
  const auto zero = generate_synthetic(cfg);
  cfg.anomaly_shift = 3.0;
  const auto shifted = generate_synthetic(cfg);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < zero.size(); ++i) {
    const auto mask = rasterize_labels(zero[i].truth, zero[i].sequence.num_instants(), cfg.instants_per_second);
    const auto& x0 = zero[i].sequence.features;
    const auto& x1 = shifted[i].sequence.features;
    const auto mean = init_context(x0);
    for (std::size_t t = 0; t < x0.rows(); ++t) {
      bool same = true;
      for (std::size_t c = 0; c < x0.cols(); ++c) same = same && x0(t, c) == x1(t, c);
      // genuine rows never depend on the shift
      if (!mask.labels[t]) {
        EXPECT_TRUE(same);
      }
      if (mask.labels[t]) {
        EXPECT_FALSE(same);
        for (std::size_t c = 0; c < x0.cols(); ++c) sum += x0(t, c) - mean[c];
        n += x0.cols();
      }
    }
  }
  // forged rows at zero shift sit on the sample mean up to noise
  const double sd = cfg.noise_scale / std::sqrt(static_cast<double>(n));
  EXPECT_LT(std::abs(sum / static_cast<double>(n)), 6.0 * sd);
}

TEST(Synthetic, ManifestAudit) {
  const auto dir = scratch("audit");
  SynthConfig cfg;
  cfg.num_samples = 200;
  cfg.forged_fraction = 0.5;
  cfg.min_segments = 1;
  cfg.max_segments = 3;
  cfg.min_segment_fraction = 0.05;
  cfg.max_segment_fraction = 0.2;
  cfg.min_instants = 40;
  cfg.max_instants = 80;
  cfg.seed = 17;
  save_dataset(dir, generate_synthetic(cfg));
  // independent pass over the emitted manifest
  const auto manifest = read_json_file(dir / "manifest.json");
  std::size_t forged = 0;
  for (const auto& s : manifest["samples"]) {
    const auto t = s["num_instants"].get<std::size_t>();
    const double ips = s["instants_per_second"].get<double>();
    EXPECT_GE(t, 40u);
    EXPECT_LE(t, 80u);
    const auto& segs = s["fake_segments"];
    if (segs.empty()) continue;
    ++forged;
    EXPECT_GE(segs.size(), 1u);
    EXPECT_LE(segs.size(), 3u);
    const auto lo = static_cast<double>(static_cast<std::size_t>(std::ceil(0.05 * t)));
    const auto hi = static_cast<double>(static_cast<std::size_t>(std::floor(0.2 * t)));
    double prev_end = -1.0;
    for (const auto& seg : segs) {
      const double len = (seg[1].get<double>() - seg[0].get<double>()) * ips;
      EXPECT_GE(len, lo - 1e-9);
      EXPECT_LE(len, hi + 1e-9);
      EXPECT_GT(seg[0].get<double>(), prev_end);
      EXPECT_LE(seg[1].get<double>(), s["duration_seconds"].get<double>());
      prev_end = seg[1].get<double>();
    }
  }
  EXPECT_EQ(forged, 100u);
  fs::remove_all(dir);
}

TEST(Synthetic, EveryPlantedSegmentHasPositiveInstant) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto cfg = small_synth(seed);
    cfg.max_segments = 2;
    for (const auto& s : generate_synthetic(cfg)) {
      const auto mask = rasterize_labels(s.truth, s.sequence.num_instants(), s.sequence.instants_per_second);
      for (const auto& seg : s.truth.segments) {
        bool hit = false;
        for (std::size_t t = 0; t < mask.size(); ++t) {
          const double center = (static_cast<double>(t) + 0.5) / s.sequence.instants_per_second;
          hit = hit || (mask.labels[t] && seg.start <= center && center <= seg.end);
        }
        EXPECT_TRUE(hit);
      }
    }
  }
}

TEST(Synthetic, InvalidConfigRejected) {
  auto cfg = small_synth(1);
  cfg.forged_fraction = 0.0;
  EXPECT_THROW(generate_synthetic(cfg), ConfigError);
  cfg = small_synth(1);
  cfg.context_opposition = 1.5;
  EXPECT_THROW(generate_synthetic(cfg), ConfigError);
  EXPECT_THROW(synth_config_from_json(json{{"bogus", 1}}), ConfigError);
}
