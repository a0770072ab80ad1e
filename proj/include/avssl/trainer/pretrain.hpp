// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "avssl/data/manifest.hpp"
#include "avssl/data/run_config.hpp"
#include "avssl/objective/objective.hpp"

namespace avssl::trainer {

/// Views per epoch (epoch_size, or the train split size when 0) and the
/// resulting number of optimizer steps.
struct EpochPlan {
  std::size_t views = 0;
  std::size_t steps_per_epoch = 0;
  std::size_t total_steps = 0;

  static EpochPlan from(const data::RunConfig& cfg, std::size_t train_clips);
};

/// Train-split indices visited in an epoch: consecutive seeded shuffles of
/// the split, concatenated and cut to plan.views.
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t train_clips,
                                     std::size_t views);

struct StepRecord {
  std::size_t step = 0;  // 1-based count of completed steps
  std::size_t epoch = 0;
  double lr_encoder = 0.0, lr_predictor = 0.0;
  std::size_t batch = 0;
  std::size_t skipped = 0;
  std::optional<objective::LossBreakdown> loss;
};

struct EpochRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double mean_total = 0.0;
  double collapse_video = 0.0, collapse_audio = 0.0;
  double collapse_reference = 0.0;  // 1 / sqrt(projector_dim)
  std::size_t skipped = 0;
};

/// One JSON object per line; see README for the keys.
std::string to_json_line(const StepRecord& r);
std::string to_json_line(const EpochRecord& r);

struct PretrainOptions {
  std::filesystem::path out_dir;
  /// Single-worker loading with a fixed draw order. The loader is always
  /// single-worker; the flag is recorded in the run summary.
  bool deterministic = true;
  std::optional<std::filesystem::path> resume;
  /// Stop (and checkpoint) once this many steps are complete; 0 runs to the end.
  std::size_t stop_after_steps = 0;
  bool log_progress = false;
};

struct PretrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path metrics;
  std::vector<std::filesystem::path> artifacts;
  std::size_t steps = 0;
  std::size_t total_steps = 0;
  bool finished = false;
  double final_total = 0.0;  // loss of the last step
  double collapse_video = 0.0, collapse_audio = 0.0;  // last completed epoch
  std::size_t skipped = 0;
};

inline constexpr const char* kMetricsFile = "metrics.jsonl";
inline constexpr const char* kFinalCheckpoint = "checkpoint.avck";
inline constexpr const char* kLastGoodCheckpoint = "last_good.avck";
inline constexpr const char* kConfigFile = "config.json";

/// Runs the optimization loop and writes config.json, metrics.jsonl,
/// checkpoint.avck and (every checkpoint_every epochs) checkpoint_epochN.avck
/// under out_dir. A non-finite loss or gradient saves last_good.avck with the
/// state before the failing step and throws NumericError.
PretrainResult pretrain(const data::RunConfig& cfg, const data::DatasetManifest& manifest,
                        const PretrainOptions& options);

}  // namespace avssl::trainer
