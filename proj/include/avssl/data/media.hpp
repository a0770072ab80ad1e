// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace avssl::data {

struct TimeWindow {
  double start_s = 0.0;
  double duration_s = 0.0;

  double end_s() const { return start_s + duration_s; }
  bool operator==(const TimeWindow&) const = default;
};

/// Mono waveform.
struct WaveformClip {
  std::vector<float> samples;
  double sample_rate_hz = 16000.0;

  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate_hz; }
  bool operator==(const WaveformClip&) const = default;
};

/// Frames stored T x H x W x 3, values in [0, 1].
struct FrameSequence {
  std::size_t frames = 0, height = 0, width = 0;
  double fps = 16.0;
  std::vector<float> pixels;

  FrameSequence() = default;
  FrameSequence(std::size_t t, std::size_t h, std::size_t w, double fps_, float fill = 0.0f)
      : frames(t), height(h), width(w), fps(fps_), pixels(t * h * w * 3, fill) {}

  std::size_t frame_size() const { return height * width * 3; }
  double duration_s() const { return static_cast<double>(frames) / fps; }
  float& at(std::size_t t, std::size_t y, std::size_t x, std::size_t c) {
    return pixels[((t * height + y) * width + x) * 3 + c];
  }
  float at(std::size_t t, std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[((t * height + y) * width + x) * 3 + c];
  }
  float* frame(std::size_t t) { return pixels.data() + t * frame_size(); }
  const float* frame(std::size_t t) const { return pixels.data() + t * frame_size(); }
  bool operator==(const FrameSequence&) const = default;
};

/// Throws ShapeError unless T >= 1, H, W >= 8 and every value is in [0, 1].
void check_frames(const FrameSequence& f);

struct AVClip {
  WaveformClip waveform;
  FrameSequence video;
  double duration_s = 0.0;
  std::optional<int> label;

  /// Builds a clip with duration = min of the two modality durations.
  /// Throws ShapeError when they differ by more than one frame period.
  static AVClip make(WaveformClip wave, FrameSequence video, std::optional<int> label = std::nullopt);
};

// --- WAV (PCM-16, mono) -----------------------------------------------------

void write_wav(const std::filesystem::path& path, const WaveformClip& wave);
/// Multi-channel files are averaged to mono.
WaveformClip read_wav(const std::filesystem::path& path);

// --- AVCX raw video container -------------------------------------------------
// Layout (little endian): "AVCX", u16 version, u32 T, u32 H, u32 W, f64 fps,
// then T*H*W*3 bytes of RGB, row-major, frame after frame.

inline constexpr std::uint16_t kAvcxVersion = 1;
inline constexpr std::size_t kAvcxHeaderBytes = 4 + 2 + 4 * 3 + 8;

struct AvcxHeader {
  std::uint32_t frames = 0, height = 0, width = 0;
  double fps = 0.0;
};

/// Values are quantized with round(v * 255).
void write_avcx(const std::filesystem::path& path, const FrameSequence& frames);
AvcxHeader read_avcx_header(const std::filesystem::path& path);
FrameSequence read_avcx(const std::filesystem::path& path);

/// Random-access reader for an AVCX file.
class AvcxReader {
 public:
  explicit AvcxReader(std::filesystem::path path);
  const AvcxHeader& header() const { return header_; }
  /// Reads the listed frame indices into a new sequence with the given fps.
  FrameSequence read(const std::vector<std::size_t>& indices, double fps) const;

 private:
  std::filesystem::path path_;
  AvcxHeader header_;
};

}  // namespace avssl::data
