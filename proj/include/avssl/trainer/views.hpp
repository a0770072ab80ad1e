// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "avssl/data/manifest.hpp"
#include "avssl/data/run_config.hpp"
#include "avssl/nn/autograd.hpp"

namespace avssl::trainer {

using data::TimeWindow;

/// On-demand access to the media of one manifest entry. The waveform is
/// read (and resampled) on first use; video frames are read per window.
class ClipReader {
 public:
  ClipReader(const data::DatasetManifest& manifest, const data::ManifestEntry& entry, double sample_rate_hz);

  const data::ManifestEntry& entry() const { return *entry_; }
  data::WaveformClip audio(const TimeWindow& w);
  data::FrameSequence video(const TimeWindow& w, double fps);

 private:
  const data::DatasetManifest* manifest_;
  const data::ManifestEntry* entry_;
  double sample_rate_hz_;
  std::optional<data::WaveformClip> wave_;
};

/// Spectrogram geometry produced for an audio window.
std::size_t spectrogram_frames(double window_s, const audio::MelConfig& mel);
/// Frames per video window.
std::size_t video_window_frames(double window_s, double fps);

/// The four view tensors of one step: v [B, 3, T, S, S], a [B, 1, F, T].
/// Modalities outside the loss mask are left null.
struct ViewBatch {
  nn::Var<float> v1, v2, a1, a2;
  std::vector<std::string> clip_ids;
  std::vector<std::string> skipped;  // infeasible for the sampler
  std::size_t size() const { return clip_ids.size(); }
};

/// Draws one ViewPair per clip and runs both pipelines in pretrain mode.
/// Clip i uses Rng::derive(step_seed, {i}); infeasible clips are skipped.
ViewBatch build_view_batch(const data::RunConfig& cfg, const data::DatasetManifest& manifest,
                           const std::vector<const data::ManifestEntry*>& clips, std::uint64_t step_seed);

}  // namespace avssl::trainer
