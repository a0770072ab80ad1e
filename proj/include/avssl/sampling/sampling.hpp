// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string_view>
#include <utility>
#include <vector>

#include "avssl/core/rng.hpp"
#include "avssl/data/media.hpp"

namespace avssl::sampling {

using data::TimeWindow;

enum class Strategy { same, overlapped, adjacent, far_apart, random };
inline constexpr std::array<Strategy, 5> kAllStrategies{Strategy::same, Strategy::overlapped,
                                                        Strategy::adjacent, Strategy::far_apart,
                                                        Strategy::random};

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view s);

struct SamplerSpec {
  Strategy strategy = Strategy::random;
  double audio_win_s = 2.0;
  double video_win_s = 0.5;

  bool operator==(const SamplerSpec&) const = default;
};

std::vector<std::string> validate(const SamplerSpec& spec);

/// Shortest clip the strategy can sample from.
double min_clip_length(const SamplerSpec& spec);

/// Audio-window start times (t1, t2). Timestamps are drawn on a 2^-20 s
/// grid so that offsets such as t2 - t1 = d/2 hold exactly in floating point.
/// Throws InfeasibleClip when the clip is too short.
std::pair<double, double> sample_view_timestamps(const SamplerSpec& spec, double clip_duration_s, Rng& rng);

struct ModalityWindows {
  TimeWindow audio;
  TimeWindow video;
};

/// Audio = [t, t + audio_win]; video centered inside it. Throws RangeError
/// when the audio window overruns the clip.
ModalityWindows modality_windows(double t, const SamplerSpec& spec, double clip_duration_s);

struct ViewPair {
  Strategy strategy = Strategy::same;
  std::array<TimeWindow, 2> audio_windows;
  std::array<TimeWindow, 2> video_windows;
};

ViewPair sample_view_pair(const SamplerSpec& spec, double clip_duration_s, Rng& rng);

/// round(duration * sr) samples starting at round(start * sr).
data::WaveformClip extract_audio_segment(const data::WaveformClip& wave, const TimeWindow& w);
data::WaveformClip extract_audio_segment(const data::AVClip& clip, const TimeWindow& w);

/// Source frame indices for round(duration * target_fps) frames at a uniform
/// stride of source_fps / target_fps starting at round(start * source_fps).
std::vector<std::size_t> video_frame_indices(double source_fps, std::size_t source_frames,
                                             const TimeWindow& w, double target_fps);

data::FrameSequence extract_video_segment(const data::AVClip& clip, const TimeWindow& w, double target_fps);

/// Overlap length divided by window length for two equal-length windows.
double overlap_fraction(const TimeWindow& a, const TimeWindow& b);

}  // namespace avssl::sampling
