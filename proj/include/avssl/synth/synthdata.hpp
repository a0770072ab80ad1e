// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "avssl/data/manifest.hpp"
#include "avssl/data/media.hpp"

namespace avssl::synth {

/// Category k is the pair (appearance group k % G, motion rate k / G) with
/// G = ceil(K / num_rates). The appearance group fixes the shape and the
/// carrier tones; the rate drives both the horizontal translation and the
/// audio amplitude envelope. Color, background, size, vertical position and
/// phase are drawn per clip.
struct SynthSpec {
  std::size_t num_categories = 8;
  std::size_t clips_per_category = 100;
  std::size_t num_rates = 2;
  double duration_s = 4.0;
  double fps = 16.0;
  double sample_rate_hz = 16000.0;
  std::size_t frame_size = 128;
  double audio_snr_db = 10.0;
  double video_noise_sigma = 0.05;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;

  bool operator==(const SynthSpec&) const = default;
};

inline constexpr std::size_t kMaxAppearanceGroups = 8;
inline constexpr std::array<double, 4> kMotionRatesHz{0.75, 2.5, 1.5, 4.0};
/// Two carrier tones per group: base and 1.5 x base.
inline constexpr std::array<double, kMaxAppearanceGroups> kCarrierBaseHz{300.0, 450.0, 700.0, 1050.0,
                                                                         1600.0, 2400.0, 3600.0, 5000.0};
inline constexpr double kCarrierRatio = 1.5;

enum class Shape { disk, square, triangle, diamond, cross, ring, hbar, vbar };
std::string_view to_string(Shape s);

std::vector<std::string> validate(const SynthSpec& spec);
std::size_t appearance_groups(const SynthSpec& spec);

/// Everything render_clip draws for one instance, exposed for oracles.
struct ClipParams {
  std::size_t category = 0;
  Shape shape = Shape::disk;
  double rate_hz = 0.0;
  std::array<double, 2> carriers_hz{};
  double phase = 0.0;           // radians, shared by motion and envelope
  std::array<float, 3> color{};  // shape RGB
  float background = 0.0f;
  double radius_px = 0.0;
  double center_x = 0.0, center_y = 0.0, amplitude_px = 0.0;
  std::array<double, 2> tone_phase{};
};

ClipParams clip_params(const SynthSpec& spec, std::size_t category, std::uint64_t instance);

/// Shape center at time t: x = cx + A sin(2 pi rate t + phase), y = cy.
std::array<double, 2> shape_center(const ClipParams& p, double t);
/// Whether pixel center (x + 0.5, y + 0.5) lies inside the shape at time t.
bool inside_shape(const ClipParams& p, double t, double x, double y);
/// Envelope 0.5 (1 + sin(2 pi rate t + phase)).
double envelope(const ClipParams& p, double t);

/// Deterministic in (spec.seed, category, instance). Throws RangeError for
/// category >= K.
data::AVClip render_clip(const SynthSpec& spec, std::size_t category, std::uint64_t instance);

std::vector<std::string> label_names(const SynthSpec& spec);

/// Renders every clip into out_dir/media, writes out_dir/manifest.jsonl and
/// the label sidecar; split is stratified per category.
data::DatasetManifest generate_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir);

inline constexpr const char* kManifestFile = "manifest.jsonl";

/// JSON form with the field names above; unknown keys are rejected.
std::string to_json(const SynthSpec& spec);
SynthSpec spec_from_json(const std::string& text);

}  // namespace avssl::synth
