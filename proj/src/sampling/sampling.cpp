// SPDX-License-Identifier: Apache-2.0
#include "avssl/sampling/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "avssl/core/error.hpp"

namespace avssl::sampling {

namespace {
constexpr std::array<std::string_view, 5> kNames{"same", "overlapped", "adjacent", "far_apart", "random"};
constexpr double kGrid = 1048576.0;  // 2^20 steps per second
constexpr double kTol = 1e-9;

// Uniform on [lo, hi] quantized down to the grid (never below lo).
double grid_uniform(Rng& rng, double lo, double hi) {
  const double v = rng.uniform(lo, hi);
  const double q = std::floor(v * kGrid) / kGrid;
  return std::clamp(q, std::ceil(lo * kGrid) / kGrid, hi);
}
}  // namespace

std::string_view to_string(Strategy s) { return kNames[static_cast<std::size_t>(s)]; }

Strategy parse_strategy(std::string_view s) {
  for (std::size_t i = 0; i < kNames.size(); ++i)
    if (s == kNames[i]) return static_cast<Strategy>(i);
  if (s == "far-apart") return Strategy::far_apart;
  throw ConfigError("unknown sampling strategy '" + std::string(s) +
                    "' (expected same, overlapped, adjacent, far_apart or random)");
}

std::vector<std::string> validate(const SamplerSpec& spec) {
  std::vector<std::string> v;
  if (!(spec.video_win_s > 0.0)) v.push_back("video window must be positive");
  if (!(spec.audio_win_s > 0.0)) v.push_back("audio window must be positive");
  if (spec.video_win_s > spec.audio_win_s) v.push_back("video window must not exceed the audio window");
  return v;
}

double min_clip_length(const SamplerSpec& spec) {
  const double d = spec.audio_win_s;
  switch (spec.strategy) {
    case Strategy::same:
    case Strategy::random:
      return d;
    case Strategy::overlapped:
      return 1.5 * d;
    case Strategy::adjacent:
    case Strategy::far_apart:
      return 2.0 * d;
  }
  return d;
}

std::pair<double, double> sample_view_timestamps(const SamplerSpec& spec, double L, Rng& rng) {
  const double need = min_clip_length(spec);
  if (L + kTol < need) throw InfeasibleClip(std::string(to_string(spec.strategy)), need, L);
  const double d = spec.audio_win_s;
  switch (spec.strategy) {
    case Strategy::same: {
      const double t = grid_uniform(rng, 0.0, std::max(0.0, L - d));
      return {t, t};
    }
    case Strategy::overlapped: {
      const double t = grid_uniform(rng, 0.0, std::max(0.0, L - 1.5 * d));
      return {t, t + d / 2};
    }
    case Strategy::adjacent: {
      const double t = grid_uniform(rng, 0.0, std::max(0.0, L - 2.0 * d));
      return {t, t + d};
    }
    case Strategy::random: {
      const double t1 = grid_uniform(rng, 0.0, std::max(0.0, L - d));
      const double t2 = grid_uniform(rng, 0.0, std::max(0.0, L - d));
      return {t1, t2};
    }
    case Strategy::far_apart: {
      const double t1 = grid_uniform(rng, 0.0, std::max(0.0, L / 2 - d));
      const double t2 = grid_uniform(rng, L / 2, std::max(L / 2, L - d));
      return {t1, t2};
    }
  }
  throw ConfigError("unknown sampling strategy");
}

ModalityWindows modality_windows(double t, const SamplerSpec& spec, double clip_duration_s) {
  if (t < 0.0 || t + spec.audio_win_s > clip_duration_s + kTol) {
    throw RangeError("audio window [" + std::to_string(t) + ", " + std::to_string(t + spec.audio_win_s) +
                     "] overruns clip of " + std::to_string(clip_duration_s) + " s");
  }
  ModalityWindows w;
  w.audio = {t, spec.audio_win_s};
  w.video = {t + (spec.audio_win_s - spec.video_win_s) / 2, spec.video_win_s};
  return w;
}

ViewPair sample_view_pair(const SamplerSpec& spec, double clip_duration_s, Rng& rng) {
  const auto [t1, t2] = sample_view_timestamps(spec, clip_duration_s, rng);
  const auto w1 = modality_windows(t1, spec, clip_duration_s);
  const auto w2 = modality_windows(t2, spec, clip_duration_s);
  ViewPair v;
  v.strategy = spec.strategy;
  v.audio_windows = {w1.audio, w2.audio};
  v.video_windows = {w1.video, w2.video};
  return v;
}

data::WaveformClip extract_audio_segment(const data::WaveformClip& wave, const TimeWindow& w) {
  if (w.start_s < 0.0 || !(w.duration_s > 0.0)) throw RangeError("invalid audio window");
  const auto start = static_cast<std::size_t>(std::llround(w.start_s * wave.sample_rate_hz));
  const auto count = static_cast<std::size_t>(std::llround(w.duration_s * wave.sample_rate_hz));
  if (start + count > wave.samples.size()) {
    throw RangeError("audio window [" + std::to_string(w.start_s) + ", " + std::to_string(w.end_s()) +
                     "] s lies beyond the clip (" + std::to_string(wave.duration_s()) + " s)");
  }
  data::WaveformClip out;
  out.sample_rate_hz = wave.sample_rate_hz;
  out.samples.assign(wave.samples.begin() + static_cast<std::ptrdiff_t>(start),
                     wave.samples.begin() + static_cast<std::ptrdiff_t>(start + count));
  return out;
}

data::WaveformClip extract_audio_segment(const data::AVClip& clip, const TimeWindow& w) {
  if (w.end_s() > clip.duration_s + kTol) throw RangeError("audio window beyond clip end");
  return extract_audio_segment(clip.waveform, w);
}

std::vector<std::size_t> video_frame_indices(double source_fps, std::size_t source_frames,
                                             const TimeWindow& w, double target_fps) {
  if (!(target_fps > 0.0) || target_fps > source_fps + kTol) {
    throw ConfigError("target fps " + std::to_string(target_fps) + " exceeds source fps " +
                      std::to_string(source_fps) + " (upsampling is not supported)");
  }
  if (w.start_s < 0.0 || !(w.duration_s > 0.0)) throw RangeError("invalid video window");
  const auto n = static_cast<std::size_t>(std::llround(w.duration_s * target_fps));
  const auto first = static_cast<std::size_t>(std::llround(w.start_s * source_fps));
  const double stride = source_fps / target_fps;
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) {
    idx[i] = first + static_cast<std::size_t>(std::floor(static_cast<double>(i) * stride + 1e-9));
    if (idx[i] >= source_frames) {
      throw RangeError("video window [" + std::to_string(w.start_s) + ", " + std::to_string(w.end_s()) +
                       "] s needs frame " + std::to_string(idx[i]) + " of " + std::to_string(source_frames));
    }
  }
  if (n == 0) throw RangeError("video window shorter than one target frame");
  return idx;
}

data::FrameSequence extract_video_segment(const data::AVClip& clip, const TimeWindow& w, double target_fps) {
  if (w.end_s() > clip.duration_s + kTol) throw RangeError("video window beyond clip end");
  const auto& src = clip.video;
  const auto idx = video_frame_indices(src.fps, src.frames, w, target_fps);
  data::FrameSequence out(idx.size(), src.height, src.width, target_fps);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    std::copy_n(src.frame(idx[k]), src.frame_size(), out.frame(k));
  }
  return out;
}

double overlap_fraction(const TimeWindow& a, const TimeWindow& b) {
  const double ov = std::min(a.end_s(), b.end_s()) - std::max(a.start_s, b.start_s);
  return std::max(0.0, ov) / a.duration_s;
}

}  // namespace avssl::sampling
