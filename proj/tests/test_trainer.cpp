#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace unicaclf;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.input_dim = 4;
  c.embed_dim = 6;
  c.num_levels = 3;
  c.batch_size = 3;
  c.epochs = 4;
  c.seed = 5;
  return c;
}

std::vector<Sample> tiny_data(std::uint64_t seed, std::size_t n = 8) {
  SynthConfig s;
  s.num_samples = n;
  s.min_instants = 16;
  s.max_instants = 24;
  s.feature_dim = 4;
  s.min_segment_fraction = 0.2;
  s.max_segment_fraction = 0.4;
  s.anomaly_shift = 2.0;
  s.seed = seed;
  return generate_synthetic(s);
}

RunDocument acceptance_doc() {
  return run_document_from_json(read_json_file(fs::path(UNICACLF_SOURCE_DIR) / "configs" / "acceptance.json"));
}

}  // namespace

TEST(Adam, MatchesScalarOracleOnQuadratic) {
  // f(x) = (x - 3)^2
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Adam adam(lr, b1, b2, eps, 1);
  std::vector<double> x{-2.0};
  double ox = -2.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 100; ++t) {
    const std::vector<double> g{2.0 * (x[0] - 3.0)};
    adam.update(x, g);
    const double og = 2.0 * (ox - 3.0);
    m = b1 * m + (1 - b1) * og;
    v = b2 * v + (1 - b2) * og * og;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    ox -= lr * mh / (std::sqrt(vh) + eps);
    EXPECT_NEAR(x[0], ox, 1e-12) << t;
  }
  EXPECT_EQ(adam.state().step, 100u);
}

TEST(GradCheck, LinearProbeIsExact) {
  // f(W) = 0.5 |W x - y|^2, gradient (W x - y) x^T
  const std::size_t out = 3, in = 5;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto x = oracle::random_vector(rng, in);
    const auto y = oracle::random_vector(rng, out);
    const auto w = oracle::random_vector(rng, out * in);
    auto residual = [&](std::span<const double> wv) {
      std::vector<double> r(out);
      for (std::size_t o = 0; o < out; ++o) {
        r[o] = -y[o];
        for (std::size_t i = 0; i < in; ++i) r[o] += wv[o * in + i] * x[i];
      }
      return r;
    };
    auto f = [&](std::span<const double> wv) {
      double s = 0.0;
      for (double r : residual(wv)) s += 0.5 * r * r;
      return s;
    };
    const auto r = residual(w);
    std::vector<double> analytic(out * in);
    for (std::size_t o = 0; o < out; ++o)
      for (std::size_t i = 0; i < in; ++i) analytic[o * in + i] = r[o] * x[i];
    GradCheckOptions opt;
    opt.step = 1e-3;  // no truncation error for a quadratic, so only round-off matters
    const auto rep = grad_check(f, w, analytic, opt);
    EXPECT_LT(rep.max_relative_error, 1e-9) << seed;
    EXPECT_EQ(rep.checked, out * in);
  }
}

TEST(GradCheck, FullModelSmall) {
  ModelConfig cfg = tiny_config();
  cfg.num_levels = 3;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    cfg.seed = seed;
    const auto ck = fresh_checkpoint(cfg);
    GradCheckOptions o;
    o.max_coordinates = 1u << 20;
    const auto r = grad_check_model(cfg, ck.params, gradcheck_sample(8, 4, seed), o);
    EXPECT_TRUE(r.passed) << r.worst_name << " " << r.max_relative_error;
    EXPECT_LT(r.max_relative_error, 1e-5);
    EXPECT_EQ(r.checked, ParamLayout(cfg).total());
  }
}

TEST(GradCheck, BaselineModel) {
  ModelConfig cfg = tiny_config();
  cfg.variant = PyramidVariant::kConvBaseline;
  cfg.phi2 = 0.0;
  const auto ck = fresh_checkpoint(cfg);
  const auto r = grad_check_model(cfg, ck.params, gradcheck_sample(8, 4, 1), {});
  EXPECT_LT(r.max_relative_error, 1e-5) << r.worst_name;
}

TEST(GradCheck, ContrastiveOnlyPathVanishesWithoutWeight) {
  // the last level's context update feeds only the contrastive term
  ModelConfig cfg = tiny_config();
  cfg.phi2 = 0.0;
  const ParamLayout layout(cfg);
  const auto ck = fresh_checkpoint(cfg);
  const auto sample = gradcheck_sample(8, 4, 2);
  const auto prep = prepare_sample(sample, cfg);
  ForwardPass fp(layout, ck.params);
  fp.run(prep);
  Vector grad(layout.total(), 0.0);
  fp.backward({1.0, cfg.phi1, cfg.phi2}, grad);
  const auto beta = layout.block(layout.level(2).d).offset;
  EXPECT_EQ(grad[beta], 0.0);
  auto x = ck.params;
  x[beta] += 1e-3;
  ForwardPass moved(layout, x);
  EXPECT_EQ(sample_objective(moved.run(prep), cfg), sample_objective(fp.loss(), cfg));

  cfg.phi2 = 0.5;
  const ParamLayout layout2(cfg);
  ForwardPass fp2(layout2, ck.params);
  fp2.run(prepare_sample(sample, cfg));
  Vector grad2(layout2.total(), 0.0);
  fp2.backward({1.0, cfg.phi1, cfg.phi2}, grad2);
  EXPECT_NE(grad2[beta], 0.0);
}

TEST(Train, ZeroLearningRateFreezesParameters) {
  auto cfg = tiny_config();
  cfg.learning_rate = 0.0;
  const auto start = fresh_checkpoint(cfg);
  const auto end = train(cfg, tiny_data(1));
  EXPECT_EQ(end.params, start.params);
  EXPECT_EQ(end.epoch, cfg.epochs);
}

TEST(Train, SameSeedSameCheckpointBytes) {
  const auto data = tiny_data(2);
  const auto a = train(tiny_config(), data);
  const auto b = train(tiny_config(), data);
  EXPECT_EQ(serialize_checkpoint(a), serialize_checkpoint(b));
  auto other = tiny_config();
  other.seed = 6;
  EXPECT_NE(train(other, data).params, a.params);
}

TEST(Train, ThreadedBatchEqualsSerial) {
  const auto data = tiny_data(3);
  auto cfg = tiny_config();
  const auto serial = train(cfg, data);
  cfg.threads = 3;
  const auto threaded = train(cfg, data);
  EXPECT_EQ(threaded.params, serial.params);
  EXPECT_EQ(threaded.loss_history, serial.loss_history);
}

TEST(Train, ResumeEqualsContinuous) {
  const auto data = tiny_data(4);
  auto cfg = tiny_config();
  cfg.epochs = 10;
  const auto continuous = train(cfg, data);

  auto half = cfg;
  half.epochs = 5;
  auto first = train(half, data);
  auto restored = deserialize_checkpoint(serialize_checkpoint(first));
  restored.config.epochs = 10;
  const auto resumed = resume_training(restored, data);
  EXPECT_EQ(resumed.params, continuous.params);
  EXPECT_EQ(resumed.optimizer.m, continuous.optimizer.m);
  EXPECT_EQ(resumed.optimizer.v, continuous.optimizer.v);
  EXPECT_EQ(resumed.loss_history, continuous.loss_history);
  EXPECT_EQ(serialize_checkpoint(resumed), serialize_checkpoint(continuous));
}

TEST(Train, OneSampleLossFallsOverTrailingWindows) {
  auto doc = acceptance_doc();
  doc.synth.num_samples = 1;
  doc.synth.forged_fraction = 1.0;
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    doc.synth.seed = seed;
    const auto data = generate_synthetic(doc.synth);
    ModelConfig cfg;
    cfg.batch_size = 1;
    cfg.epochs = 50;
    cfg.seed = seed;
    const auto ck = train(cfg, data);
    const auto& h = ck.loss_history;
    ASSERT_EQ(h.size(), 50u);
    auto window = [&](std::size_t from) {
      double s = 0.0;
      for (std::size_t i = from; i < from + 10; ++i) s += h[i];
      return s / 10.0;
    };
    EXPECT_LT(window(30), window(20)) << seed;
    EXPECT_LT(window(40), window(30)) << seed;
    EXPECT_LT(h.back(), 0.25 * h.front()) << seed;
  }
}

TEST(Train, EarlyStopEndsBeforeBudget) {
  auto cfg = tiny_config();
  cfg.learning_rate = 0.0;  // flat loss never improves
  cfg.batch_size = 8;        // one batch per epoch so shuffling cannot move the mean
  cfg.epochs = 30;
  cfg.early_stop_window = 2;
  EXPECT_EQ(train(cfg, tiny_data(5)).epoch, 4);
}

TEST(Train, RejectsMismatchedInput) {
  auto cfg = tiny_config();
  cfg.input_dim = 7;
  EXPECT_THROW(train(cfg, tiny_data(6)), DataError);
  EXPECT_THROW(train(tiny_config(), {}), DataError);
}

TEST(Train, NonFiniteLossIsDivergence) {
  auto cfg = tiny_config();
  cfg.learning_rate = 1e6;
  cfg.epochs = 30;
  EXPECT_THROW(train(cfg, tiny_data(7)), DivergenceError);
}

TEST(Checkpoint, FileRoundTripAndCorruption) {
  const auto ck = train(tiny_config(), tiny_data(8));
  const auto path = fs::temp_directory_path() / "unicaclf_test_ckpt.bin";
  save_checkpoint(path, ck);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(ck));
  EXPECT_EQ(back.epoch, ck.epoch);
  EXPECT_EQ(back.rng_state, ck.rng_state);

  auto bytes = serialize_checkpoint(ck);
  EXPECT_EQ(bytes.substr(0, 8), "UCLFCKPT");
  bytes[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bytes), DataError);
  EXPECT_THROW(deserialize_checkpoint(serialize_checkpoint(ck).substr(0, 40)), DataError);
  EXPECT_THROW(deserialize_checkpoint(serialize_checkpoint(ck) + "x"), DataError);
  EXPECT_THROW(load_checkpoint(path.string() + ".missing"), MissingFileError);
  fs::remove(path);
}

TEST(Infer, ZeroHeadsScoreOneHalf) {
  auto cfg = tiny_config();
  cfg.max_kept = 5;
  auto ck = fresh_checkpoint(cfg);
  const ParamLayout layout(cfg);
  for (const BranchBlocks* bb : {&layout.cls(), &layout.reg()})
    for (auto blk : {bb->conv1_w, bb->conv1_b, bb->conv2_w, bb->conv2_b, bb->out_w, bb->out_b}) {
      const auto& b = layout.block(blk);
      std::fill(ck.params.begin() + static_cast<long>(b.offset), ck.params.begin() + static_cast<long>(b.offset + b.size()), 0.0);
    }
  const auto data = tiny_data(9, 3);
  ForwardPass fp(layout, ck.params);
  fp.run_features(data[0].sequence.features);
  for (const auto& lv : fp.predictions())
    for (std::size_t t = 0; t < lv.size(); ++t) {
      EXPECT_EQ(lv.logits[t], 0.0);
      EXPECT_EQ(lv.start_offsets[t], 1.0);
      EXPECT_EQ(lv.end_offsets[t], 1.0);
    }
  const auto preds = infer(ck, data);
  for (const auto& [_, props] : preds) {
    ASSERT_FALSE(props.empty());
    EXPECT_LE(props.size(), cfg.max_kept);
    EXPECT_EQ(props.front().score, 0.5);
  }
}

TEST(Infer, OverfitOneSampleFindsSegment) {
  auto doc = acceptance_doc();
  doc.synth.num_samples = 1;
  doc.synth.forged_fraction = 1.0;
  doc.synth.seed = 0;
  const auto data = generate_synthetic(doc.synth);
  auto cfg = doc.model;
  cfg.batch_size = 1;
  cfg.epochs = 50;
  cfg.seed = 0;
  const auto preds = infer(train(cfg, data), data);
  const auto& props = preds.at(data[0].sequence.id);
  ASSERT_FALSE(props.empty());
  EXPECT_GE(iou_1d(props.front(), data[0].truth.segments[0]), 0.5);
}

TEST(Infer, EmptyDatasetGivesValidEmptyFile) {
  const auto preds = infer(fresh_checkpoint(tiny_config()), {});
  EXPECT_TRUE(preds.empty());
  const auto j = predictions_to_json(preds);
  EXPECT_EQ(j["version"], kPredictionsVersion);
  EXPECT_TRUE(j["videos"].empty());
  EXPECT_TRUE(predictions_from_json(json::parse(j.dump())).empty());
}

TEST(Infer, SameCheckpointSameBytes) {
  const auto data = tiny_data(10);
  const auto ck = train(tiny_config(), data);
  EXPECT_EQ(predictions_to_json(infer(ck, data)).dump(), predictions_to_json(infer(ck, data)).dump());
}

TEST(Ablation, ForcesBaselineAndNoContrastive) {
  const auto data = tiny_data(11);
  auto cfg = tiny_config();
  cfg.phi2 = 3.0;
  const auto ck = ablation_baseline(cfg, data);
  EXPECT_EQ(ck.config.variant, PyramidVariant::kConvBaseline);
  EXPECT_EQ(ck.config.phi2, 0.0);
  const auto back = deserialize_checkpoint(serialize_checkpoint(ck));
  EXPECT_EQ(back.config.variant, PyramidVariant::kConvBaseline);
  EXPECT_EQ(back.config.phi2, 0.0);
  // same evaluate pipeline as the full model
  const auto r = evaluate(infer(ck, data), truth_map(data));
  EXPECT_EQ(r.ap.size(), 3u);
}
