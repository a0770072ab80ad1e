// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avssl/audio/audio.hpp"
#include "avssl/model/model.hpp"
#include "avssl/objective/objective.hpp"
#include "avssl/sampling/sampling.hpp"
#include "avssl/video/video.hpp"

namespace avssl::data {

struct OptimConfig {
  double lr_start = 2e-4;
  double lr_end = 0.0;
  /// Predictor learning rate = multiplier * lr_start, held constant.
  double predictor_lr_mult = 10.0;
  double weight_decay = 1e-4;
  /// false: L2 term added to the gradient; true: decoupled decay.
  bool decoupled_weight_decay = false;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 32;
  /// Sampled views per epoch; 0 means the size of the train split.
  std::size_t epoch_size = 0;
  std::size_t epochs = 30;
  std::size_t warmup_steps = 0;
  bool trust_ratio = false;
  double trust_coefficient = 1e-3;
};

struct RunConfig {
  std::string preset = "desk";
  sampling::SamplerSpec sampler{sampling::Strategy::overlapped, 2.0, 0.5};
  audio::AudioAugParams audio_aug;
  audio::MelConfig mel;
  double sample_rate_hz = 16000.0;
  video::VideoAugParams video_aug;
  double video_fps = 16.0;
  model::ModelConfig model;
  OptimConfig optim;
  objective::LossMask loss_mask = objective::LossMask::full();
  std::uint64_t seed = 0;
  /// Save a checkpoint every this many epochs (0: only at the end).
  std::size_t checkpoint_every = 0;
};

/// Named presets: "desk" (batch 32, 30 epochs, tiny encoders) and
/// "kinetics_sound" (batch 512, epoch size 220000, 100 epochs, reference
/// encoders). Throws ConfigError on an unknown name.
RunConfig preset(const std::string& name);
std::vector<std::string> preset_names();

/// Every violated invariant; empty when valid. Pure.
std::vector<std::string> validate(const RunConfig& cfg);

/// Throws ConfigError listing every violation.
const RunConfig& require_valid(const RunConfig& cfg);

/// Hierarchical JSON document with fixed key names (see README).
std::string to_json(const RunConfig& cfg);
/// Starts from the preset named by the "preset" key (default "desk") and
/// overlays the given keys. Unknown keys are rejected.
RunConfig config_from_json(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace avssl::data
