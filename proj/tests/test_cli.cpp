// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <unistd.h>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "uattn/cli.hpp"
#include "uattn/data.hpp"
#include "uattn/gradcheck.hpp"
#include "uattn/train.hpp"

namespace uattn {
namespace {

using testing::random_tensor;
using testing::scratch_dir;

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "uattn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

// A trained 32x32 checkpoint and its manifest, shared by the tests below.
class CliFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    // ctest runs each case in its own process, possibly in parallel.
    dir_ = scratch_dir("cli_" + std::to_string(::getpid()));
    std::ofstream(dir_ / "corpus.txt") << "kind=checker seed=1 period=8\n"
                                       << "kind=stripes seed=2 period=16\n"
                                       << "kind=bricks seed=3 period=16\n";
    const auto r = run({"--seed", "3", "train", "--procedural", (dir_ / "corpus.txt").string(),
                        "--out", (dir_ / "run").string(), "--size", "32", "--batch", "2",
                        "--epochs", "1", "--no-gan"});
    ASSERT_EQ(r.code, 0) << r.err;
    ckpt_ = dir_ / "run" / checkpoint_filename(1);
  }
  static inline std::filesystem::path dir_;
  static inline std::filesystem::path ckpt_;
};

TEST(CliUsage, MissingOrUnknownArgumentsExitTwo) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"--bogus"}).code, 2);
  EXPECT_EQ(run({"dance"}).code, 2);
  EXPECT_EQ(run({"train", "--procedural", "x.txt"}).code, 2);
  EXPECT_EQ(run({"train", "--out", "/tmp/never"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(CliUsage, BadArchitectureOrSizeExitTwo) {
  const auto dir = scratch_dir("cli_usage");
  std::ofstream(dir / "m.txt") << "kind=checker\n";
  const auto m = (dir / "m.txt").string();
  EXPECT_EQ(run({"train", "--procedural", m, "--out", dir.string(), "--arch", "vgg"}).code, 2);
  EXPECT_EQ(run({"train", "--procedural", m, "--out", dir.string(), "--size", "40"}).code, 2);
}

TEST(CliUsage, MissingDataExitsThree) {
  const auto dir = scratch_dir("cli_data");
  EXPECT_EQ(run({"train", "--procedural", (dir / "none.txt").string(), "--out", dir.string()}).code, 3);
  EXPECT_EQ(run({"train", "--data", (dir / "none").string(), "--out", dir.string()}).code, 3);
  std::ofstream(dir / "bad.txt") << "kind=checker period=5\n";
  EXPECT_EQ(run({"train", "--procedural", (dir / "bad.txt").string(), "--out", dir.string(),
                 "--size", "32", "--batch", "1", "--no-gan"}).code, 3);
  EXPECT_EQ(run({"infer", "--ckpt", (dir / "x.ckpt").string(), "--input", "a.ppm", "--output",
                 "b.ppm"}).code, 3);
}

TEST_F(CliFixture, TrainReportsAndWritesCheckpoint) {
  ASSERT_TRUE(std::filesystem::exists(ckpt_));
  ASSERT_TRUE(std::filesystem::exists(dir_ / "run" / "metrics.log"));
  const auto state = load_checkpoint(ckpt_);
  EXPECT_EQ(state.config.model_seed, 3u);
  EXPECT_EQ(state.config.data_seed, 3u);
  EXPECT_FALSE(state.config.use_gan);
  EXPECT_EQ(state.config.adam.lr, 0.001);
}

TEST_F(CliFixture, ResumeMayOnlyExtendEpochs) {
  const auto out = (dir_ / "resumed").string();
  const auto m = (dir_ / "corpus.txt").string();
  EXPECT_EQ(run({"train", "--procedural", m, "--out", out, "--resume", ckpt_.string(), "--batch",
                 "1"}).code, 2);
  const auto r = run({"train", "--procedural", m, "--out", out, "--resume", ckpt_.string(),
                      "--epochs", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("steps: 2"), std::string::npos) << r.out;
}

TEST_F(CliFixture, InferPadsHalfSizeInput) {
  save_image(random_tensor<float>({3, 16, 16}, 1), dir_ / "small.ppm");
  const auto r = run({"infer", "--ckpt", ckpt_.string(), "--input", (dir_ / "small.ppm").string(),
                      "--output", (dir_ / "big.ppm").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_image(dir_ / "big.ppm").shape(), (Shape{3, 32, 32}));
  save_image(random_tensor<float>({3, 20, 20}, 2), dir_ / "odd.ppm");
  EXPECT_EQ(run({"infer", "--ckpt", ckpt_.string(), "--input", (dir_ / "odd.ppm").string(),
                 "--output", (dir_ / "o.ppm").string()}).code, 2);
}

TEST_F(CliFixture, EvalReportsMeansAndBaseline) {
  const auto r = run({"eval", "--ckpt", ckpt_.string(), "--procedural",
                      (dir_ / "corpus.txt").string(), "--baseline", "naive-tile"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* key : {"images: 3", "mean_ssim:", "mean_cfd:", "mean_naive_tile_ssim:",
                          "mean_naive_tile_cfd:"}) {
    EXPECT_NE(r.out.find(key), std::string::npos) << key;
  }
  EXPECT_EQ(run({"eval", "--ckpt", ckpt_.string(), "--procedural", (dir_ / "corpus.txt").string(),
                 "--metrics", "psnr"}).code, 2);
}

TEST_F(CliFixture, VizAttnStagesAndPatch) {
  save_image(random_tensor<float>({3, 32, 32}, 3), dir_ / "in.ppm");
  const auto in = (dir_ / "in.ppm").string();
  const auto out = (dir_ / "attn.ppm").string();
  const auto r = run({"viz-attn", "--ckpt", ckpt_.string(), "--input", in, "--stage", "3", "--out", out});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("grid: 8x8"), std::string::npos);
  EXPECT_NE(r.out.find("patch: 0,0"), std::string::npos);
  EXPECT_EQ(load_image(out).shape(), (Shape{3, 32, 32}));
  EXPECT_EQ(run({"viz-attn", "--ckpt", ckpt_.string(), "--input", in, "--stage", "6", "--out", out}).code, 2);
  EXPECT_EQ(run({"viz-attn", "--ckpt", ckpt_.string(), "--input", in, "--stage", "1", "--patch",
                 "2,0", "--out", out}).code, 2);
}

TEST(CliGradcheck, FilteredAndFullReports) {
  const auto one = run({"gradcheck", "--ops", "conv2d"});
  EXPECT_EQ(one.code, 0) << one.out;
  EXPECT_EQ(one.out.rfind("conv2d", 0), 0u);
  EXPECT_EQ(run({"gradcheck", "--ops", "fft"}).code, 2);
  // An impossible tolerance turns every op into a failure.
  EXPECT_EQ(run({"gradcheck", "--ops", "tanh", "--tol", "0"}).code, 1);

  const auto all = run({"gradcheck"});
  EXPECT_EQ(all.code, 0) << all.out;
  for (const auto& name : gradcheck_op_names()) {
    std::size_t hits = 0;
    std::istringstream lines(all.out);
    for (std::string line; std::getline(lines, line);) {
      if (line.substr(0, line.find(' ')) == name) ++hits;
    }
    EXPECT_EQ(hits, 1u) << name;
  }
}

}  // namespace
}  // namespace uattn
