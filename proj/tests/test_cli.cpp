#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "cli.hpp"
#include "config.hpp"
#include "instformer/dataset_io.hpp"
#include "instformer/error.hpp"
#include "ply.hpp"
#include "support.hpp"

using namespace instformer;
using namespace instformer::cli;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

class CliFlow : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::path(::testing::TempDir()) / ("instformer_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST(Config, PresetsDifferWhereExpected) {
  const auto desk = preset("desk");
  const auto full = preset("full");
  EXPECT_EQ(desk.train.weights.chamfer, ChamferReduction::mean);
  EXPECT_EQ(full.train.weights.chamfer, ChamferReduction::sum);
  EXPECT_EQ(full.train.optimizer.lr, 1.5e-4);
  EXPECT_EQ(desk.model.noise_scale, 0.1);
  EXPECT_EQ(full.model.n_pc, 1000u);
  EXPECT_NO_THROW(preset("tiny").validate());
}

TEST(Config, JsonRoundTripAndOverrides) {
  auto c = preset("tiny");
  const auto j = to_json(c);
  auto d = preset("full");
  merge(d, j);
  EXPECT_EQ(to_json(d), j);

  apply_override(c, "train.lr=0.005");
  apply_override(c, "model.encoding=none");
  apply_override(c, "generator.seat_width=[0.3,0.4]");
  EXPECT_EQ(c.train.optimizer.lr, 0.005);
  EXPECT_EQ(c.model.encoding, EncodingMode::none);
  EXPECT_EQ(c.generator.seat_width.hi, 0.4);
  EXPECT_THROW(apply_override(c, "train.nonsense=1"), InvalidArgument);
  EXPECT_THROW(apply_override(c, "bogus.lr=1"), InvalidArgument);
  EXPECT_THROW(apply_override(c, "train.lr"), InvalidArgument);
  EXPECT_THROW(apply_override(c, "train.epochs=\"many\""), InvalidArgument);
}

TEST(Config, LoadFromFileWithBasePreset) {
  const auto file = fs::path(::testing::TempDir()) / "instformer_cfg.json";
  std::ofstream(file) << R"({"preset": "tiny", "train": {"epochs": 3}})";
  const auto c = load_config(file.string());
  EXPECT_EQ(c.train.epochs, 3u);
  EXPECT_EQ(c.model.d_model, 32u);
  std::ofstream(file) << "{ not json";
  EXPECT_THROW(load_config(file.string()), Error);
  fs::remove(file);
  EXPECT_THROW(load_config("/nonexistent/config.json"), Error);
}

TEST(Ply, RoundTripAndRejection) {
  testing_support::Rng rng(1);
  std::vector<PartCloud> parts{PartCloud(testing_support::random_points(rng, 5)),
                               PartCloud(testing_support::random_points(rng, 7))};
  std::vector<Pose> poses{testing_support::random_pose(rng), testing_support::random_pose(rng)};
  const auto pts = posed_points(parts, poses);
  std::stringstream s;
  write_ply(s, pts);
  const auto back = read_ply(s);
  ASSERT_EQ(back.size(), 12u);
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].part, pts[i].part);
    EXPECT_NEAR((back[i].position - pts[i].position).norm(), 0.0, 1e-6);
  }
  std::stringstream bad("ply\nformat binary_little_endian 1.0\nend_header\n");
  EXPECT_THROW(read_ply(bad), FormatError);
  std::stringstream empty;
  EXPECT_THROW(read_ply(empty), FormatError);
}

TEST(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(invoke({}).code, kExitUsage);
  EXPECT_EQ(invoke({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(invoke({"eval", "--ckpt", "x"}).code, kExitUsage);
  EXPECT_EQ(invoke({"gen-data", "--out", "/tmp/x.bin", "--category", "sofa"}).code, kExitUsage);
  const auto r = invoke({"gen-data", "--out", "/tmp/x.bin", "--set", "train.bogus=1"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("bogus"), std::string::npos);
  EXPECT_EQ(invoke({"--help"}).code, kExitOk);
}

TEST_F(CliFlow, MissingFilesExitWithOne) {
  const auto r = invoke({"eval", "--data", path("absent.bin"), "--ckpt", "untrained", "--run-dir", path("run")});
  EXPECT_EQ(r.code, kExitFailure);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
}

TEST_F(CliFlow, GenerateTrainEvaluateAssemble) {
  const std::vector<std::string> tiny{"--config", "tiny", "--set", "model.n_layers=2"};
  auto with = [&](std::vector<std::string> args) {
    args.insert(args.end(), tiny.begin(), tiny.end());
    return invoke(args);
  };
  const auto data = path("chairs.bin");
  auto r = with({"gen-data", "--category", "all", "--count", "6", "--out", data, "--run-dir", path("gen")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(load_dataset(data).size(), 18u);
  EXPECT_TRUE(fs::exists(data + ".manifest.json"));
  EXPECT_TRUE(fs::exists(path("gen") + "/config.json"));

  r = with({"train", "--data", data, "--split", "all", "--run-dir", path("train"), "--set", "train.epochs=2"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto ckpt = path("train") + "/last.ckpt";
  EXPECT_TRUE(fs::exists(ckpt));
  EXPECT_TRUE(fs::exists(path("train") + "/records.jsonl"));

  r = with({"eval", "--data", data, "--ckpt", ckpt, "--split", "all", "--run-dir", path("eval")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("PA"), std::string::npos);
  EXPECT_TRUE(fs::exists(path("eval") + "/eval.jsonl"));

  r = with({"assemble", "--data", data, "--ckpt", ckpt, "--index", "2", "--out", path("shape"), "--run-dir",
            path("asm")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto sample = load_dataset(data)[2];
  std::size_t expected = 0;
  for (const auto& p : sample.parts) expected += p.size();
  for (const char* suffix : {"_pred.ply", "_gt.ply"}) {
    std::ifstream in(path("shape") + suffix);
    EXPECT_EQ(read_ply(in).size(), expected) << suffix;
  }
  EXPECT_EQ(with({"assemble", "--data", data, "--ckpt", ckpt, "--index", "99", "--run-dir", path("asm")}).code,
            kExitFailure);

  r = with({"inprocess-eval", "--data", data, "--ckpt", ckpt, "--split", "all", "--run-dir", path("ip0")});
  EXPECT_EQ(r.code, kExitFailure);

  r = with({"train", "--inprocess", "--data", data, "--ckpt", ckpt, "--split", "all", "--run-dir", path("ft"), "--set",
            "finetune.epochs=1"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  r = with({"inprocess-eval", "--data", data, "--ckpt", path("ft") + "/decoder.ckpt", "--split", "all", "--run-dir",
            path("ip")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(path("ip") + "/inprocess.jsonl"));
}

TEST_F(CliFlow, MismatchedModelAndDataIsReported) {
  const auto data = path("lamps.bin");
  ASSERT_EQ(invoke({"gen-data", "--category", "lamp", "--count", "2", "--out", data, "--config", "tiny", "--run-dir",
                    path("gen")})
                .code,
            kExitOk);
  const auto r = invoke({"eval", "--data", data, "--ckpt", "untrained", "--split", "all", "--run-dir", path("e")});
  EXPECT_EQ(r.code, kExitFailure);
  EXPECT_NE(r.err.find("n_pc"), std::string::npos);
}

TEST_F(CliFlow, GradcheckReportsMaxError) {
  const auto r = invoke({"gradcheck", "--entries", "4", "--run-dir", path("gc")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("max relative error"), std::string::npos);
}
