#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"

using namespace lcnn;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// One small end-to-end run shared by the tests below.
class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "lcnn_cli_test";
    fs::remove_all(root_);
    ASSERT_EQ(run({"synth", "--out", data(), "--count", "20", "--seed", "5"}).code, 0);
    const auto r = run({"train", "--data", data(), "--out", out(), "--epochs", "1", "--conv2-kernels", "4", "--seed", "5",
                        "--augment", "on", "--batch-size", "8"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static std::string data() { return (root_ / "data").string(); }
  static std::string out() { return (root_ / "run").string(); }
  static std::string weights() { return (root_ / "run" / "model_best.lcnn").string(); }

  static inline fs::path root_;
};

}  // namespace

TEST_F(CliTest, TrainWritesAllArtifacts) {
  for (auto f : {"model_final.lcnn", "model_best.lcnn", "curves.csv", "metrics.json", "metrics.txt", "confusion.txt",
                 "manifest.csv", "config.txt"})
    EXPECT_TRUE(fs::exists(fs::path(out()) / f)) << f;
  const auto manifest = slurp(fs::path(out()) / "manifest.csv");
  EXPECT_NE(manifest.find("#aug="), std::string::npos);
  const auto config = slurp(fs::path(out()) / "config.txt");
  EXPECT_NE(config.find("conv2-kernels = 4"), std::string::npos);
  EXPECT_NE(config.find("augment = on"), std::string::npos);
}

TEST_F(CliTest, PredictPrintsLabelAndProbability) {
  const auto img = (fs::path(data()) / "tumor" / "img_00000.png").string();
  const auto r = run({"predict", "--weights", weights(), "--image", img, "--conv2-kernels", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream is(r.out);
  std::string label;
  double p = -1;
  is >> label >> p;
  EXPECT_TRUE(label == "tumor" || label == "normal");
  EXPECT_GE(p, 0.0);
  EXPECT_LE(p, 1.0);
  EXPECT_EQ(label == "tumor", p >= 0.5);
}

TEST_F(CliTest, EvalReadsConfigSnapshot) {
  const auto cfg = (fs::path(out()) / "config.txt").string();
  const auto eval_dir = (root_ / "eval").string();
  const auto r = run({"eval", "--config", cfg, "--weights", weights(), "--out", eval_dir});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("accuracy"), std::string::npos);
  const auto j = nlohmann::json::parse(slurp(fs::path(eval_dir) / "eval_metrics.json"));
  EXPECT_EQ(j["tp"].get<int>() + j["tn"].get<int>() + j["fp"].get<int>() + j["fn"].get<int>(), 6);  // 3 + 3 test images
}

TEST_F(CliTest, CommandLineOverridesConfigFile) {
  const auto cfg = root_ / "override.txt";
  std::ofstream(cfg) << "# comment\nconv2-kernels = 64\nthreshold = 0.5\n";
  const auto img = (fs::path(data()) / "normal" / "img_00001.png").string();
  // the file asks for 64 kernels, which would not match the weights
  EXPECT_EQ(run({"predict", "--config", cfg.string(), "--weights", weights(), "--image", img}).code, cli::kModelError);
  EXPECT_EQ(run({"predict", "--config", cfg.string(), "--weights", weights(), "--image", img, "--conv2-kernels", "4"}).code,
            cli::kOk);
}

TEST_F(CliTest, ExitCodes) {
  const auto img = (fs::path(data()) / "normal" / "img_00001.png").string();
  EXPECT_EQ(run({"train", "--data", (root_ / "nope").string(), "--out", out()}).code, cli::kInputError);
  EXPECT_EQ(run({"train", "--data", data()}).code, cli::kInputError);
  EXPECT_EQ(run({"train", "--data", data(), "--out", out(), "--optimizer", "rmsprop"}).code, cli::kInputError);
  EXPECT_EQ(run({"predict", "--weights", weights(), "--image", img}).code, cli::kModelError);
  EXPECT_EQ(run({"predict", "--weights", img, "--image", img}).code, cli::kModelError);
  EXPECT_EQ(run({"predict", "--weights", weights(), "--image", weights(), "--conv2-kernels", "4"}).code, cli::kInputError);
  EXPECT_EQ(run({"predict", "--config", (root_ / "missing.txt").string(), "--weights", weights(), "--image", img}).code,
            cli::kInputError);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kInputError);
  EXPECT_EQ(run({"--help"}).code, cli::kOk);
}

TEST_F(CliTest, EvalReproducesTrainingMetrics) {
  const auto cfg = (fs::path(out()) / "config.txt").string();
  const auto final_weights = (fs::path(out()) / "model_final.lcnn").string();
  const auto a = root_ / "eval_a", b = root_ / "eval_b";
  ASSERT_EQ(run({"eval", "--config", cfg, "--weights", final_weights, "--out", a.string()}).code, 0);
  ASSERT_EQ(run({"eval", "--config", cfg, "--weights", final_weights, "--out", b.string()}).code, 0);
  EXPECT_EQ(slurp(a / "eval_metrics.json"), slurp(b / "eval_metrics.json"));
  const auto e = nlohmann::json::parse(slurp(a / "eval_metrics.json"));
  const auto t = nlohmann::json::parse(slurp(fs::path(out()) / "metrics.json"))["final"];
  for (auto k : {"tp", "tn", "fp", "fn"}) EXPECT_EQ(e[k], t[k]) << k;
}

TEST_F(CliTest, AugmentPreviewIsReproducible) {
  const auto a = root_ / "preview_a", b = root_ / "preview_b";
  for (const auto& d : {a, b})
    ASSERT_EQ(run({"augment-preview", "--data", data(), "--out", d.string(), "--count", "2", "--seed", "9"}).code, 0);
  for (auto f : {"aug_0000.png", "aug_0001.png", "params.csv"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST_F(CliTest, AugmentPreviewWritesImagesAndParameters) {
  const auto dir = root_ / "preview";
  const auto r = run({"augment-preview", "--data", data(), "--out", dir.string(), "--count", "3", "--seed", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (auto f : {"aug_0000.png", "aug_0001.png", "aug_0002.png"}) {
    const auto img = decode_image(dir / f);
    EXPECT_EQ(img.height, 100u);
  }
  std::ifstream params(dir / "params.csv");
  std::string header;
  std::getline(params, header);
  EXPECT_EQ(header, "file,source,sigma,brightness,contrast,degrees,dx,dy,scale");
}

TEST(CliSynth, WritesBalancedClasses) {
  const auto dir = fs::temp_directory_path() / "lcnn_cli_synth";
  fs::remove_all(dir);
  const auto r = run({"synth", "--out", dir.string(), "--count", "7", "--size", "32", "--lesion-min", "0.9"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto count = [](const fs::path& p) { return std::distance(fs::directory_iterator(p), fs::directory_iterator{}); };
  EXPECT_EQ(count(dir / "normal"), 3);
  EXPECT_EQ(count(dir / "tumor"), 4);
  EXPECT_EQ(decode_image(dir / "tumor" / "img_00000.png").width, 32u);
  fs::remove_all(dir);
}

TEST(CliConfig, ExpansionSkipsKeysGivenOnCommandLine) {
  const auto cfg = fs::temp_directory_path() / "lcnn_cfg_test.txt";
  std::ofstream(cfg) << "lr = 0.01\nepochs = 3  # trailing comment\n\n";
  const auto args = cli::detail::expand_config({"train", "--config", cfg.string(), "--epochs", "9"});
  EXPECT_EQ(args, (std::vector<std::string>{"train", "--lr", "0.01", "--epochs", "9"}));
  std::ofstream(cfg) << "no equals sign\n";
  EXPECT_THROW(cli::detail::expand_config({"train", "--config", cfg.string()}), InputError);
  fs::remove(cfg);
}
