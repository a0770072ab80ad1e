// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "avssl/data/run_config.hpp"
#include "avssl/model/model.hpp"
#include "avssl/trainer/optim.hpp"

namespace avssl::trainer {

/// Running per-dimension moments of length-normalized projection rows.
struct CollapseMonitor {
  std::vector<double> sum, sumsq;
  std::size_t rows = 0;

  void add(const Tensor<float>& z);
  /// Mean over dimensions of the per-dimension standard deviation; 0 when
  /// nothing was added.
  double value() const;
  void reset();
};

/// Per-epoch running totals, kept in checkpoints so a mid-epoch resume
/// produces the same epoch record.
struct EpochTotals {
  CollapseMonitor video, audio;
  double loss_sum = 0.0;
  std::size_t steps = 0;
  std::size_t skipped = 0;

  void reset();
};

/// Everything besides the network needed to continue training.
struct TrainState {
  std::size_t step = 0;  // completed optimizer steps
  std::string rng_state;
  OptimizerState<float> optim;
  EpochTotals epoch;
};

// Container layout (little endian): 8 magic bytes "AVSSLCKP", u16 version,
// u64 metadata length, UTF-8 JSON metadata, then raw arrays at the offsets
// listed in the metadata (relative to the end of the metadata).
inline constexpr char kCheckpointMagic[8] = {'A', 'V', 'S', 'S', 'L', 'C', 'K', 'P'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

/// FNV-1a over the canonical JSON of the config.
std::string config_hash(const data::RunConfig& cfg);

void save_checkpoint(const std::filesystem::path& path, const data::RunConfig& cfg,
                     const model::Network<float>& net, const TrainState& state);

struct Checkpoint {
  data::RunConfig config;
  std::string config_hash;
  TrainState state;
  std::unique_ptr<model::Network<float>> network;
};

/// Throws IoError on bad magic (naming offset 0), version mismatch,
/// truncation, or arrays that do not match the stored config.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Metadata as pretty JSON: format, version, step, config, config hash,
/// parameter counts and array count.
std::string describe_checkpoint(const std::filesystem::path& path);

}  // namespace avssl::trainer
