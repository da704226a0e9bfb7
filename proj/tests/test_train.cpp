// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "test_util.hpp"
#include "uattn/data.hpp"
#include "uattn/train.hpp"

namespace uattn {
namespace {

using testing::scratch_dir;

std::vector<TexturePair> corpus(std::size_t n, std::int64_t size = 32) {
  std::vector<TensorF> targets;
  const PatternKind kinds[] = {PatternKind::kChecker, PatternKind::kStripes, PatternKind::kBricks};
  for (std::size_t i = 0; i < n; ++i) {
    targets.push_back(generate({kinds[i % 3], i, 8, static_cast<std::int64_t>(i), 0}, size));
  }
  return make_dataset(targets);
}

TrainConfig small_config(bool use_gan, std::int64_t batch, std::int64_t epochs) {
  TrainConfig c;
  c.input_hw = 32;
  c.batch_size = batch;
  c.epochs = epochs;
  c.use_gan = use_gan;
  c.model_seed = 5;
  c.data_seed = 6;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

bool same_values(const TensorF& a, const TensorF& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

TEST(Config, DefaultsFollowTrainingRecipe) {
  const TrainConfig c;
  EXPECT_EQ(c.batch_size, 8);
  EXPECT_EQ(c.epochs, 100);
  EXPECT_EQ(c.adam.lr, 0.001);
  EXPECT_EQ(c.input_hw, 128);
  EXPECT_TRUE(c.use_gan);
  EXPECT_EQ(c.extractor_seed, 1234u);
  EXPECT_EQ(c.loss, LossWeights{});
}

TEST(Config, TextRoundTripIsExact) {
  TrainConfig c = small_config(false, 3, 7);
  c.variant = ArchVariant::kPyramid3;
  c.adam.lr = 0.1 + 0.2;
  c.loss.style = 1.0 / 3.0;
  c.model_seed = 0xFFFFFFFFFFFFFFFFULL;
  c.checkpoint_every = 17;
  EXPECT_EQ(parse_config(format_config(c)), c);
  EXPECT_EQ(parse_config(format_config(TrainConfig{})), TrainConfig{});
}

TEST(Config, PartialTextOverridesAndRejections) {
  const auto c = parse_config("# note\n[train]\nbatch_size = 4\n[model]\nvariant = baseline\n");
  EXPECT_EQ(c.batch_size, 4);
  EXPECT_EQ(c.variant, ArchVariant::kBaselineCascade3);
  EXPECT_EQ(c.epochs, 100);
  EXPECT_THROW(parse_config("[train]\nwarmup = 3\n"), ConfigError);
  EXPECT_THROW(parse_config("[schedule]\n"), ConfigError);
  EXPECT_THROW(parse_config("[train]\nbatch_size = four\n"), ConfigError);
  TrainConfig bad = small_config(true, 1, 1);
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = small_config(false, 1, 1);
  bad.input_hw = 48;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(State, GeneratorAndDiscriminatorNamesDisjoint) {
  const auto s = init_state(small_config(true, 2, 1));
  std::set<std::string> gen;
  for (const auto& [name, t] : s.gen.params) gen.insert(name);
  for (const auto& [name, t] : s.disc.params) EXPECT_FALSE(gen.count(name)) << name;
  EXPECT_EQ(s.adam_gen.m.size(), s.gen.params.size());
  EXPECT_EQ(s.adam_disc.v.size(), s.disc.params.size());
}

TEST(Step, WithoutAdversaryDiscriminatorIsUntouched) {
  auto s = init_state(small_config(false, 2, 1));
  const auto before = s.disc;
  const FrozenExtractor fx;
  const auto data = corpus(2);
  const auto r = train_step(data, s, fx);
  EXPECT_EQ(r.step, 1);
  EXPECT_EQ(r.gen.gan_g, 0.0);
  EXPECT_EQ(s.adam_disc.step_count, 0);
  for (const auto& [name, t] : before.params) EXPECT_TRUE(same_values(t, s.disc.params.at(name)));
  for (int i = 0; i < Discriminator::kLayers; ++i) EXPECT_EQ(before.spectral[i].u, s.disc.spectral[i].u);
}

TEST(Step, AdversarialStepUpdatesBothNetworks) {
  auto s = init_state(small_config(true, 2, 1));
  const auto before = init_state(small_config(true, 2, 1));
  const auto r = train_step(corpus(2), s, FrozenExtractor{});
  EXPECT_GT(r.d_loss, 0.0);
  EXPECT_EQ(s.adam_disc.step_count, 1);
  EXPECT_EQ(s.adam_gen.step_count, 1);
  EXPECT_FALSE(same_values(before.disc.params.at("conv1.w"), s.disc.params.at("conv1.w")));
  EXPECT_FALSE(same_values(before.gen.params.at("enc.conv1.w"), s.gen.params.at("enc.conv1.w")));
  EXPECT_THROW(train_step(corpus(1), s, FrozenExtractor{}), ConfigError);
}

TEST(Step, TwentyStepsRepeatExactly) {
  auto run = [] {
    auto s = init_state(small_config(false, 2, 10));
    return train(s, corpus(4)).history;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), 20u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].gen.total, b[i].gen.total);
    EXPECT_EQ(a[i].gen.l1, b[i].gen.l1);
  }
}

TEST(Step, NonFiniteWeightAbortsWithoutUpdating) {
  auto s = init_state(small_config(false, 1, 1));
  s.gen.params.at("enc.conv1.w").mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
  const auto dec_before = s.gen.params.at("dec.conv2.w").clone();
  try {
    train_step(corpus(1), s, FrozenExtractor{});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("NaN"), std::string::npos) << e.what();
  }
  EXPECT_TRUE(same_values(dec_before, s.gen.params.at("dec.conv2.w")));
  EXPECT_EQ(s.step, 0);
}

TEST(Step, PureL1RegressionDescends) {
  TrainConfig c = small_config(false, 1, 50);
  c.loss = {1.0, 0.0, 0.0, 0.0};
  auto s = init_state(c);
  const auto h = train(s, corpus(1)).history;
  ASSERT_EQ(h.size(), 50u);
  for (const auto& r : h) EXPECT_LE(r.gen.l1, 2.0 * h.front().gen.l1);
  EXPECT_LT(h.back().gen.l1, h.front().gen.l1);
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  auto s = init_state(small_config(true, 2, 1));
  train_step(corpus(2), s, FrozenExtractor{});
  const auto bytes = encode_checkpoint(s);
  EXPECT_EQ(bytes.substr(0, 8), "UATTNCKP");
  const auto back = decode_checkpoint(bytes);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  EXPECT_EQ(back.step, 1);
  EXPECT_EQ(back.config, s.config);
}

TEST(Checkpoint, ReloadedModelForwardsIdentically) {
  TrainConfig c = small_config(false, 1, 1);
  c.model_seed = 7;
  const auto s = init_state(c);
  const auto dir = scratch_dir("ckpt_forward");
  save_checkpoint(s, dir / "a.ckpt");
  const auto back = load_checkpoint(dir / "a.ckpt");
  NoGradGuard no_grad;
  const auto x = corpus(1)[0].input;
  EXPECT_TRUE(same_values(forward(x, s.gen), forward(x, back.gen)));
}

TEST(Checkpoint, CorruptionRejected) {
  const auto bytes = encode_checkpoint(init_state(small_config(false, 1, 1)));
  SplitMix64 rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    auto bad = bytes;
    const auto pos = static_cast<std::size_t>(rng.below(bad.size()));
    bad[pos] = static_cast<char>(bad[pos] ^ 0x5A);
    EXPECT_THROW(decode_checkpoint(bad), FormatError) << "byte " << pos;
  }
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), FormatError);
  auto version = bytes;
  version[8] = 2;
  EXPECT_THROW(decode_checkpoint(version), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), IoError);
}

TEST(Loop, CheckpointScheduleAndLog) {
  TrainConfig c = small_config(false, 1, 5);
  c.checkpoint_every = 10;
  auto s = init_state(c);
  const auto dir = scratch_dir("ckpt_schedule");
  const auto r = train(s, corpus(5), {dir, {}});
  ASSERT_EQ(r.history.size(), 25u);
  ASSERT_EQ(r.checkpoints.size(), 3u);
  EXPECT_EQ(r.checkpoints[0].filename(), checkpoint_filename(10));
  EXPECT_EQ(r.checkpoints[1].filename(), checkpoint_filename(20));
  EXPECT_EQ(r.checkpoints[2].filename(), "checkpoint_00000025.ckpt");
  std::ifstream log(dir / "metrics.log");
  std::string line;
  std::getline(log, line);
  EXPECT_EQ(line, kMetricsHeader);
  int rows = 0;
  while (std::getline(log, line)) ++rows;
  EXPECT_EQ(rows, 25);
}

TEST(Loop, ZeroEpochsWritesInitialWeights) {
  auto s = init_state(small_config(false, 1, 0));
  const auto dir = scratch_dir("zero_epochs");
  const auto r = train(s, corpus(2), {dir, {}});
  EXPECT_TRUE(r.history.empty());
  ASSERT_EQ(r.checkpoints.size(), 1u);
  EXPECT_EQ(slurp(r.checkpoints[0]), encode_checkpoint(init_state(small_config(false, 1, 0))));
}

TEST(Loop, ResumeMatchesUninterruptedRun) {
  TrainConfig c = small_config(true, 2, 3);
  c.checkpoint_every = 3;
  const auto data = corpus(4);
  const auto dir = scratch_dir("resume_full");
  auto full = init_state(c);
  const auto ref = train(full, data, {dir, {}});
  ASSERT_EQ(ref.history.size(), 6u);

  auto resumed = load_checkpoint(dir / checkpoint_filename(3));
  EXPECT_EQ(resumed.step, 3);
  const auto rest = train(resumed, data);
  ASSERT_EQ(rest.history.size(), 3u);
  EXPECT_EQ(rest.history[0].gen.total, ref.history[3].gen.total);
  EXPECT_EQ(rest.history[0].d_loss, ref.history[3].d_loss);
  EXPECT_EQ(encode_checkpoint(resumed), slurp(dir / checkpoint_filename(6)));
}

TEST(FineTune, ZeroEpochsKeepsWeightsAndResetsOptimizer) {
  auto s = init_state(small_config(false, 1, 1));
  train(s, corpus(1));
  const auto ft = fine_tune(s, 64, 0, corpus(1, 64));
  EXPECT_EQ(ft.config.input_hw, 64);
  EXPECT_EQ(ft.step, 0);
  EXPECT_EQ(ft.adam_gen.step_count, 0);
  for (const auto& [name, t] : s.gen.params) EXPECT_TRUE(same_values(t, ft.gen.params.at(name)));
  for (const auto& [name, m] : ft.adam_gen.m)
    for (float x : m) ASSERT_EQ(x, 0.0f);
  EXPECT_THROW(fine_tune(s, 48, 0, corpus(1)), ConfigError);
}

TEST(FineTune, TrainsAtTheLargerSize) {
  auto s = init_state(small_config(false, 1, 1));
  const auto ft = fine_tune(s, 64, 1, corpus(2, 64));
  EXPECT_EQ(ft.step, 2);
  for (const auto& [name, t] : s.gen.params) EXPECT_EQ(t.shape(), ft.gen.params.at(name).shape());
}

}  // namespace
}  // namespace uattn
