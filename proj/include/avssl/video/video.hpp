// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <vector>

#include "avssl/audio/audio.hpp"
#include "avssl/core/rng.hpp"
#include "avssl/data/media.hpp"

namespace avssl::video {

using audio::AugMode;
using data::FrameSequence;

struct VideoAugParams {
  struct {
    bool enabled = true;
    double min_area = 0.08;
    std::array<double, 2> aspect{3.0 / 4.0, 4.0 / 3.0};
    std::size_t out_size = 112;
  } multi_scale_crop;
  struct {
    bool enabled = true;
    double p = 0.5;
  } horizontal_flip;
  struct {
    bool enabled = true;
    double brightness = 0.4, contrast = 0.4, saturation = 0.4, hue = 0.2;
  } color_jitter;
  struct {
    bool enabled = true;
    double p = 0.2;
  } gray_scale;
  struct {
    bool enabled = true;
    double p = 0.5;
    std::array<double, 2> sigma{0.1, 2.0};
  } gaussian_blur;
  struct {
    bool enabled = true;
    std::size_t max_size = 20;
    std::size_t num = 1;
  } cutout;
  bool temporal_consistency = true;

  /// Every augmentation disabled (frames are still resized to out_size).
  static VideoAugParams none();
};

std::vector<std::string> validate(const VideoAugParams& p);

struct CropRect {
  std::size_t x = 0, y = 0, w = 0, h = 0;
  bool operator==(const CropRect&) const = default;
};

/// Factors and application order (0 brightness, 1 contrast, 2 saturation,
/// 3 hue) of one color-jitter draw.
struct JitterParams {
  double brightness = 1.0, contrast = 1.0, saturation = 1.0, hue = 0.0;
  std::array<int, 4> order{0, 1, 2, 3};
  bool operator==(const JitterParams&) const = default;
};

struct CutoutPatch {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open, already clipped
  std::array<float, 3> fill{};
};

/// Per-stage record of one augment_video call; per-frame vectors have one
/// entry per frame.
struct VideoAugTrace {
  int crop_calls = 0, flip_calls = 0, jitter_calls = 0, gray_calls = 0, blur_calls = 0, cutout_calls = 0;
  std::vector<CropRect> crops;
  std::vector<bool> flips;
  std::vector<JitterParams> jitters;
  bool grayed = false;
  bool blurred = false;
  double blur_sigma = 0.0;
  std::vector<CutoutPatch> patches;
};

/// Bilinear, half-pixel centered.
FrameSequence resize(const FrameSequence& f, std::size_t out_h, std::size_t out_w);

FrameSequence multi_scale_crop(const FrameSequence& f, double min_area, std::size_t out_size, bool consistent,
                               Rng& rng, std::vector<CropRect>* rects = nullptr,
                               std::array<double, 2> aspect = {3.0 / 4.0, 4.0 / 3.0});
FrameSequence horizontal_flip(const FrameSequence& f, double p, bool consistent, Rng& rng,
                              std::vector<bool>* flips = nullptr);

JitterParams draw_jitter(double brightness, double contrast, double saturation, double hue, Rng& rng);
/// Applies one parameter set to a single frame in place.
void apply_jitter(float* frame, std::size_t pixels, const JitterParams& j);
FrameSequence color_jitter(const FrameSequence& f, double brightness, double contrast, double saturation,
                           double hue, bool consistent, Rng& rng, std::vector<JitterParams>* params = nullptr);

FrameSequence gray_scale(const FrameSequence& f, double p, Rng& rng, bool* applied = nullptr);

/// Normalized 1-D Gaussian taps.
std::vector<double> gaussian_kernel(double sigma, std::size_t size);
/// Odd size nearest to out_size / 10 (at least 3).
std::size_t blur_kernel_size(std::size_t out_size);
/// Separable blur with reflect padding.
FrameSequence blur_frames(const FrameSequence& f, double sigma, std::size_t kernel_size);
FrameSequence gaussian_blur(const FrameSequence& f, double p, Rng& rng, std::size_t out_size = 112,
                            std::array<double, 2> sigma_range = {0.1, 2.0}, double* sigma = nullptr);

/// Patches filled with the per-channel mean of frame 0, at the same place in
/// every frame.
FrameSequence cutout(const FrameSequence& f, std::size_t max_size, std::size_t num, Rng& rng,
                     std::vector<CutoutPatch>* patches = nullptr);

/// MSC -> HF -> CJ -> GS -> GB -> Cutout; eval_feature mode skips GB.
FrameSequence augment_video(const FrameSequence& f, const VideoAugParams& params, AugMode mode, Rng& rng,
                            VideoAugTrace* trace = nullptr);

/// Writes T x H x W x 3 frames as a channel-first [3, T, H, W] block.
void to_channel_first(const FrameSequence& f, float* dst);

}  // namespace avssl::video
