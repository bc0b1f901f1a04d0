#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "unicaclf/unicaclf.hpp"

using namespace unicaclf;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "unicaclf");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("unicaclf_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    config_ = dir_ / "small.json";
    write_text_file(config_, R"({
  "input_dim": 4, "embed_dim": 6, "num_levels": 2, "epochs": 2, "batch_size": 4, "seed": 3,
  "synth": {"num_samples": 6, "min_instants": 16, "max_instants": 20, "feature_dim": 4,
            "min_segment_fraction": 0.2, "max_segment_fraction": 0.4, "seed": 9}
})");
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& rel) const { return (dir_ / rel).string(); }

  fs::path dir_;
  fs::path config_;
};

}  // namespace

TEST_F(CliTest, EvalOnPerfectPredictionsScoresOne) {
  ASSERT_EQ(run_cli({"synth", "--config", config_.string(), "--out", path("data"), "-q"}).code, 0);
  const auto data = load_dataset(path("data/manifest.json"));
  PredictionMap perfect;
  for (const auto& s : data) {
    auto& v = perfect[s.sequence.id];
    for (const auto& seg : s.truth.segments) v.push_back({1.0, seg.start, seg.end});
  }
  write_text_file(path("pred.json"), predictions_to_json(perfect).dump());
  const auto r = run_cli({"eval", "--pred", path("pred.json"), "--data", path("data/manifest.json"), "--out",
                          path("eval"), "-q", "--stdout"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = json::parse(slurp(path("eval/report.json")));
  EXPECT_EQ(report.dump(), json::parse(r.out).dump());
  for (const auto& [k, v] : report["ap"].items()) EXPECT_EQ(v.get<double>(), 1.0) << k;
  for (const auto& [k, v] : report["ar"].items()) EXPECT_EQ(v.get<double>(), 1.0) << k;
  EXPECT_EQ(report["ap_average"].get<double>(), 1.0);
  EXPECT_EQ(report["ar_average"].get<double>(), 1.0);
  EXPECT_TRUE(fs::exists(path("eval/metrics.csv")));
  EXPECT_TRUE(fs::exists(path("eval/config.json")));
}

TEST_F(CliTest, SynthIsByteIdenticalAcrossRuns) {
  ASSERT_EQ(run_cli({"synth", "--config", config_.string(), "--out", path("a"), "-q"}).code, 0);
  ASSERT_EQ(run_cli({"synth", "--config", config_.string(), "--out", path("b"), "-q"}).code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(path("a"))) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), path("a"));
    EXPECT_EQ(slurp(e.path()), slurp(dir_ / "b" / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 6u + 2u);
  ASSERT_EQ(run_cli({"synth", "--config", config_.string(), "--out", path("c"), "--seed", "10", "-q"}).code, 0);
  EXPECT_NE(slurp(path("a/manifest.json")), slurp(path("c/manifest.json")));
}

TEST_F(CliTest, TrainInferPipelineEchoesConfig) {
  ASSERT_EQ(run_cli({"synth", "--config", config_.string(), "--out", path("data"), "-q"}).code, 0);
  const auto r = run_cli({"train", "--config", config_.string(), "--set", "learning_rate=0.01", "--data",
                          path("data/manifest.json"), "--out", path("run"), "-q"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto cfg = json::parse(slurp(path("run/config.json")));
  EXPECT_EQ(cfg["learning_rate"].get<double>(), 0.01);
  EXPECT_EQ(cfg["num_levels"].get<int>(), 2);
  const auto ck = load_checkpoint(path("run/checkpoint.bin"));
  EXPECT_EQ(ck.config.learning_rate, 0.01);
  EXPECT_EQ(ck.epoch, 2);
  const auto csv = slurp(path("run/loss.csv"));
  EXPECT_EQ(csv.rfind("step,loss\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * 2);

  const auto i = run_cli({"infer", "--ckpt", path("run/checkpoint.bin"), "--data", path("data/manifest.json"),
                          "--out", path("pred.json"), "-q"});
  ASSERT_EQ(i.code, 0) << i.err;
  EXPECT_EQ(predictions_from_json(read_json_file(path("pred.json"))).size(), 6u);
  EXPECT_TRUE(fs::exists(path("pred.json.config.json")));

  const auto a = run_cli({"ablate", "--config", config_.string(), "--data", path("data/manifest.json"), "--out",
                          path("abl"), "-q"});
  ASSERT_EQ(a.code, 0) << a.err;
  const auto acfg = json::parse(slurp(path("abl/config.json")));
  EXPECT_EQ(acfg["variant"], "conv_baseline");
  EXPECT_EQ(acfg["phi2"].get<double>(), 0.0);
}

TEST_F(CliTest, LogLinesGoToStderr) {
  const auto r = run_cli({"synth", "--config", config_.string(), "--out", path("data"), "--stdout"});
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.err.find("synth: wrote 6 samples"), std::string::npos);
  EXPECT_EQ(r.err[0], '[');
  EXPECT_EQ(json::parse(r.out)["samples"].size(), 6u);
  const auto q = run_cli({"synth", "--config", config_.string(), "--out", path("data2"), "-q"});
  EXPECT_TRUE(q.err.empty());
}

TEST_F(CliTest, GradcheckAcceptanceConfig) {
  const auto r = run_cli({"gradcheck", "--config", UNICACLF_SOURCE_DIR "/configs/acceptance.json", "--step",
                          "1e-5", "--out", path("gc"), "-q"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rep = json::parse(slurp(path("gc/gradcheck.json")));
  EXPECT_TRUE(rep["passed"].get<bool>());
  EXPECT_LT(rep["max_relative_error"].get<double>(), 1e-5);
  EXPECT_TRUE(fs::exists(path("gc/config.json")));
}

TEST_F(CliTest, ExitCodes) {
  auto kind_of = [](const Result& r) { return r.err.substr(0, r.err.find(" exit=")); };

  auto r = run_cli({"frobnicate"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("unknown subcommand 'frobnicate'"), std::string::npos);
  EXPECT_EQ(run_cli({}).code, 2);
  EXPECT_EQ(run_cli({"synth"}).code, 2);  // --out is required
  EXPECT_EQ(run_cli({"synth", "--out", path("x"), "--bogus"}).code, 2);

  r = run_cli({"train", "--data", path("nope/manifest.json"), "--out", path("run")});
  EXPECT_EQ(r.code, 4);
  EXPECT_EQ(kind_of(r), "unicaclf: error kind=missing_file");
  EXPECT_EQ(run_cli({"synth", "--config", path("nope.json"), "--out", path("x")}).code, 4);

  write_text_file(path("bad.json"), R"({"input_dim": 4, "learning_rat": 0.1})");
  r = run_cli({"synth", "--config", path("bad.json"), "--out", path("x")});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("learning_rat"), std::string::npos);
  EXPECT_EQ(run_cli({"synth", "--set", "synth.num_samples=0", "--out", path("x")}).code, 3);
  EXPECT_EQ(run_cli({"synth", "--set", "nonsense", "--out", path("x")}).code, 3);
  write_text_file(path("broken.json"), "{ not json");
  EXPECT_EQ(run_cli({"synth", "--config", path("broken.json"), "--out", path("x")}).code, 3);

  fs::create_directories(path("corrupt"));
  write_text_file(path("corrupt/manifest.json"), R"({"samples": [{"id": "v"}]})");
  r = run_cli({"train", "--data", path("corrupt/manifest.json"), "--out", path("run")});
  EXPECT_EQ(r.code, 5);
  EXPECT_EQ(kind_of(r), "unicaclf: error kind=data");

  r = run_cli({"gradcheck", "--config", config_.string(), "--tolerance", "1e-12", "-q"});
  EXPECT_EQ(r.code, 6);
  EXPECT_EQ(kind_of(r), "unicaclf: error kind=gradcheck");

  ASSERT_EQ(run_cli({"synth", "--config", config_.string(), "--out", path("data"), "-q"}).code, 0);
  r = run_cli({"train", "--config", config_.string(), "--set", "learning_rate=1e6", "--set", "epochs=30",
               "--data", path("data/manifest.json"), "--out", path("div"), "-q"});
  EXPECT_EQ(r.code, 7);
  EXPECT_EQ(kind_of(r), "unicaclf: error kind=diverged");
}

TEST_F(CliTest, HelpListsFlagsAndExitCodes) {
  const auto r = run_cli({"--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* s : {"synth", "train", "ablate", "infer", "eval", "gradcheck", "--config", "--set", "--out",
                        "--data", "--ckpt", "--pred", "--seed", "--stdout", "--quiet", "--verbose", "--tolerance",
                        "--step", "--instants", "--max-coords"})
    EXPECT_NE(r.out.find(s), std::string::npos) << s;
  for (const char* s : {"0 ", "1 ", "2 ", "3 ", "4 ", "5 ", "6 ", "7 "})
    EXPECT_NE(r.out.find(std::string("\n  ") + s), std::string::npos) << s;
}
