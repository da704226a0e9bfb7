// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0
//
// Alternating discriminator/generator optimization, binary checkpoints, the
// per-step metrics log and fine-tuning at a larger input size.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "uattn/data.hpp"
#include "uattn/losses.hpp"
#include "uattn/model.hpp"
#include "uattn/optim.hpp"

namespace uattn {

struct TrainConfig {
  ArchVariant variant = ArchVariant::kUAttention;
  std::int64_t input_hw = 128;
  std::int64_t batch_size = 8;
  std::int64_t epochs = 100;
  AdamConfig adam;
  LossWeights loss;
  bool use_gan = true;
  std::uint64_t model_seed = 0;
  std::uint64_t data_seed = 0;
  std::uint64_t extractor_seed = FrozenExtractor::kDefaultSeed;
  std::int64_t checkpoint_every = 1000;

  bool operator==(const TrainConfig& o) const;
  /// Throws ConfigError for out-of-range values.
  void validate() const;
};

/// Sectioned key=value text ([model], [optim], [loss], [seeds], [train]).
/// Floating-point values are written with 17 significant digits so parsing
/// the text back reproduces the config exactly.
std::string format_config(const TrainConfig& config);
/// Overrides the fields named in `text`; unknown sections or keys throw.
void apply_config(TrainConfig& config, std::istream& text);
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);

/// Everything a run needs to continue bit-exactly.
struct TrainState {
  TrainConfig config;
  ModelWeights<float> gen;
  Discriminator disc;
  AdamState<float> adam_gen;
  AdamState<float> adam_disc;
  std::int64_t step = 0;  // optimizer steps completed
};

/// Fresh weights from the config seeds and zero Adam moments.
TrainState init_state(const TrainConfig& config);

struct StepResult {
  std::int64_t step = 0;  // 1-based index of the step just taken
  LossReport gen;
  double d_loss = 0.0;
};

/// One discriminator update (skipped without the adversarial loss) followed
/// by one generator update. Throws NumericError naming the first non-finite
/// loss term or gradient; parameters are left untouched in that case.
StepResult train_step(const std::vector<TexturePair>& batch, TrainState& state,
                      const FrozenExtractor& extractor);

// ---- checkpoints ---------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'U', 'A', 'T', 'T', 'N', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const TrainState& state);
/// Throws FormatError on bad magic, version, truncation, checksum failure or
/// tensors that disagree with the layout implied by the stored config.
TrainState decode_checkpoint(const std::string& bytes);
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

std::string checkpoint_filename(std::int64_t step);

// ---- training loop ---------------------------------------------------------------

struct TrainOptions {
  /// Directory for checkpoints and metrics.log; empty disables all output.
  std::filesystem::path out_dir;
  std::function<void(const StepResult&)> on_step;
};

struct TrainResult {
  std::vector<StepResult> history;
  std::vector<std::filesystem::path> checkpoints;
};

/// Steps per epoch: floor(dataset / batch).
std::int64_t steps_per_epoch(std::size_t dataset_size, std::int64_t batch_size);

/// Runs from state.step to epochs * steps_per_epoch. Batch order within an
/// epoch depends only on (data_seed, epoch), so a state loaded from a
/// checkpoint continues exactly like the uninterrupted run. Checkpoints are
/// written every checkpoint_every steps and after the last step (or at step 0
/// when there is nothing to train).
TrainResult train(TrainState& state, const std::vector<TexturePair>& dataset,
                  const TrainOptions& options = {});

/// Keeps the generator and discriminator weights, switches to new_input_hw,
/// resets both Adam states and the step counter, then trains for `epochs`.
TrainState fine_tune(const TrainState& pretrained, std::int64_t new_input_hw,
                     std::int64_t epochs, const std::vector<TexturePair>& dataset,
                     const TrainOptions& options = {});

inline constexpr const char* kMetricsHeader =
    "# step epoch l1 perceptual style gan_g total d_loss wall_s";

}  // namespace uattn
