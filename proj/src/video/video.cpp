// SPDX-License-Identifier: Apache-2.0
#include "avssl/video/video.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "avssl/core/error.hpp"

namespace avssl::video {

namespace {

constexpr double kLuma[3] = {0.299, 0.587, 0.114};

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

double luma(const float* px) { return kLuma[0] * px[0] + kLuma[1] * px[1] + kLuma[2] * px[2]; }

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d == 0.0) {
    h = 0.0;
    return;
  }
  if (mx == r) {
    h = (g - b) / d;
  } else if (mx == g) {
    h = 2.0 + (b - r) / d;
  } else {
    h = 4.0 + (r - g) / d;
  }
  h /= 6.0;
  h -= std::floor(h);
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double h6 = h * 6.0;
  const auto i = static_cast<int>(std::floor(h6)) % 6;
  const double f = h6 - std::floor(h6);
  const double p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
  switch (i) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

CropRect draw_crop(std::size_t H, std::size_t W, double min_area, std::array<double, 2> aspect, Rng& rng) {
  const double area = static_cast<double>(H * W);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(min_area, 1.0);
    const double ratio = rng.uniform(aspect[0], aspect[1]);
    const auto w = static_cast<std::size_t>(std::lround(std::sqrt(target * ratio)));
    const auto h = static_cast<std::size_t>(std::lround(std::sqrt(target / ratio)));
    if (w >= 1 && h >= 1 && w <= W && h <= H) {
      CropRect r;
      r.w = w;
      r.h = h;
      r.x = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(W - w)));
      r.y = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(H - h)));
      return r;
    }
  }
  return {0, 0, W, H};
}

// Bilinear resample of one frame region into dst (out_h x out_w x 3).
void resample_region(const float* src, std::size_t W, const CropRect& r, std::size_t out_h, std::size_t out_w,
                     float* dst) {
  const double sy = static_cast<double>(r.h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(r.w) / static_cast<double>(out_w);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    double y = (static_cast<double>(oy) + 0.5) * sy - 0.5;
    y = std::clamp(y, 0.0, static_cast<double>(r.h - 1));
    const auto y0 = static_cast<std::size_t>(y);
    const std::size_t y1 = std::min(y0 + 1, r.h - 1);
    const double fy = y - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      double x = (static_cast<double>(ox) + 0.5) * sx - 0.5;
      x = std::clamp(x, 0.0, static_cast<double>(r.w - 1));
      const auto x0 = static_cast<std::size_t>(x);
      const std::size_t x1 = std::min(x0 + 1, r.w - 1);
      const double fx = x - static_cast<double>(x0);
      const float* p00 = src + ((r.y + y0) * W + r.x + x0) * 3;
      const float* p01 = src + ((r.y + y0) * W + r.x + x1) * 3;
      const float* p10 = src + ((r.y + y1) * W + r.x + x0) * 3;
      const float* p11 = src + ((r.y + y1) * W + r.x + x1) * 3;
      float* q = dst + (oy * out_w + ox) * 3;
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = (1.0 - fx) * p00[c] + fx * p01[c];
        const double bot = (1.0 - fx) * p10[c] + fx * p11[c];
        q[c] = static_cast<float>((1.0 - fy) * top + fy * bot);
      }
    }
  }
}

void flip_frame(float* frame, std::size_t H, std::size_t W) {
  for (std::size_t y = 0; y < H; ++y) {
    float* row = frame + y * W * 3;
    for (std::size_t x = 0; x < W / 2; ++x)
      for (std::size_t c = 0; c < 3; ++c) std::swap(row[x * 3 + c], row[(W - 1 - x) * 3 + c]);
  }
}

std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < static_cast<std::ptrdiff_t>(n) ? i : period - i);
}

}  // namespace

VideoAugParams VideoAugParams::none() {
  VideoAugParams p;
  p.multi_scale_crop.enabled = false;
  p.horizontal_flip.enabled = false;
  p.color_jitter.enabled = false;
  p.gray_scale.enabled = false;
  p.gaussian_blur.enabled = false;
  p.cutout.enabled = false;
  return p;
}

std::vector<std::string> validate(const VideoAugParams& p) {
  std::vector<std::string> v;
  auto prob = [&](double x, const char* name) {
    if (!(x >= 0.0 && x <= 1.0)) v.push_back(std::string(name) + " probability must be in [0, 1]");
  };
  prob(p.horizontal_flip.p, "horizontal flip");
  prob(p.gray_scale.p, "gray scale");
  prob(p.gaussian_blur.p, "gaussian blur");
  const auto& m = p.multi_scale_crop;
  if (!(m.min_area > 0.0 && m.min_area <= 1.0)) v.push_back("multi-scale crop min area must be in (0, 1]");
  if (m.out_size < 8) v.push_back("output size must be at least 8");
  if (!(m.aspect[0] > 0.0 && m.aspect[0] <= m.aspect[1])) v.push_back("crop aspect range must satisfy 0 < low <= high");
  const auto& cj = p.color_jitter;
  if (cj.brightness < 0 || cj.contrast < 0 || cj.saturation < 0) v.push_back("color jitter strengths must be >= 0");
  if (!(cj.hue >= 0.0 && cj.hue <= 0.5)) v.push_back("hue jitter must be in [0, 0.5]");
  if (!(p.gaussian_blur.sigma[0] > 0.0 && p.gaussian_blur.sigma[0] <= p.gaussian_blur.sigma[1])) {
    v.push_back("blur sigma range must satisfy 0 < low <= high");
  }
  if (p.cutout.max_size == 0) v.push_back("cutout max size must be positive");
  return v;
}

FrameSequence resize(const FrameSequence& f, std::size_t out_h, std::size_t out_w) {
  if (f.height == out_h && f.width == out_w) return f;
  FrameSequence out(f.frames, out_h, out_w, f.fps);
  const CropRect full{0, 0, f.width, f.height};
  for (std::size_t t = 0; t < f.frames; ++t) resample_region(f.frame(t), f.width, full, out_h, out_w, out.frame(t));
  return out;
}

FrameSequence multi_scale_crop(const FrameSequence& f, double min_area, std::size_t out_size, bool consistent,
                               Rng& rng, std::vector<CropRect>* rects, std::array<double, 2> aspect) {
  if (f.height * 4 < out_size || f.width * 4 < out_size) {
    throw ShapeError("multi_scale_crop: " + std::to_string(f.height) + "x" + std::to_string(f.width) +
                     " frames are too small for output " + std::to_string(out_size));
  }
  FrameSequence out(f.frames, out_size, out_size, f.fps);
  CropRect shared;
  for (std::size_t t = 0; t < f.frames; ++t) {
    if (t == 0 || !consistent) shared = draw_crop(f.height, f.width, min_area, aspect, rng);
    if (rects) rects->push_back(shared);
    resample_region(f.frame(t), f.width, shared, out_size, out_size, out.frame(t));
  }
  return out;
}

FrameSequence horizontal_flip(const FrameSequence& f, double p, bool consistent, Rng& rng, std::vector<bool>* flips) {
  FrameSequence out = f;
  bool coin = false;
  for (std::size_t t = 0; t < f.frames; ++t) {
    if (t == 0 || !consistent) coin = rng.bernoulli(p);
    if (flips) flips->push_back(coin);
    if (coin) flip_frame(out.frame(t), f.height, f.width);
  }
  return out;
}

JitterParams draw_jitter(double brightness, double contrast, double saturation, double hue, Rng& rng) {
  JitterParams j;
  j.brightness = rng.uniform(std::max(0.0, 1.0 - brightness), 1.0 + brightness);
  j.contrast = rng.uniform(std::max(0.0, 1.0 - contrast), 1.0 + contrast);
  j.saturation = rng.uniform(std::max(0.0, 1.0 - saturation), 1.0 + saturation);
  j.hue = rng.uniform(-hue, hue);
  std::vector<int> order{0, 1, 2, 3};
  rng.shuffle(order);
  std::copy(order.begin(), order.end(), j.order.begin());
  return j;
}

void apply_jitter(float* frame, std::size_t pixels, const JitterParams& j) {
  for (int op : j.order) {
    switch (op) {
      case 0:
        if (j.brightness == 1.0) break;
        for (std::size_t i = 0; i < pixels * 3; ++i) frame[i] = clamp01(frame[i] * j.brightness);
        break;
      case 1: {
        if (j.contrast == 1.0) break;
        double m = 0.0;
        for (std::size_t i = 0; i < pixels; ++i) m += luma(frame + i * 3);
        m /= static_cast<double>(pixels);
        for (std::size_t i = 0; i < pixels * 3; ++i) frame[i] = clamp01(j.contrast * frame[i] + (1.0 - j.contrast) * m);
        break;
      }
      case 2:
        if (j.saturation == 1.0) break;
        for (std::size_t i = 0; i < pixels; ++i) {
          float* px = frame + i * 3;
          const double g = luma(px);
          for (std::size_t c = 0; c < 3; ++c) px[c] = clamp01(j.saturation * px[c] + (1.0 - j.saturation) * g);
        }
        break;
      case 3:
        if (j.hue == 0.0) break;
        for (std::size_t i = 0; i < pixels; ++i) {
          float* px = frame + i * 3;
          double h, s, v, r, g, b;
          rgb_to_hsv(px[0], px[1], px[2], h, s, v);
          if (s == 0.0) continue;
          h += j.hue;
          h -= std::floor(h);
          hsv_to_rgb(h, s, v, r, g, b);
          px[0] = clamp01(r);
          px[1] = clamp01(g);
          px[2] = clamp01(b);
        }
        break;
      default:
        break;
    }
  }
}

FrameSequence color_jitter(const FrameSequence& f, double brightness, double contrast, double saturation, double hue,
                           bool consistent, Rng& rng, std::vector<JitterParams>* params) {
  FrameSequence out = f;
  JitterParams j;
  for (std::size_t t = 0; t < f.frames; ++t) {
    if (t == 0 || !consistent) j = draw_jitter(brightness, contrast, saturation, hue, rng);
    if (params) params->push_back(j);
    apply_jitter(out.frame(t), f.height * f.width, j);
  }
  return out;
}

FrameSequence gray_scale(const FrameSequence& f, double p, Rng& rng, bool* applied) {
  const bool coin = rng.bernoulli(p);
  if (applied) *applied = coin;
  if (!coin) return f;
  FrameSequence out = f;
  for (std::size_t i = 0; i < out.pixels.size(); i += 3) {
    const float g = clamp01(luma(&out.pixels[i]));
    out.pixels[i] = out.pixels[i + 1] = out.pixels[i + 2] = g;
  }
  return out;
}

std::vector<double> gaussian_kernel(double sigma, std::size_t size) {
  std::vector<double> k(size);
  const double c = static_cast<double>(size / 2);
  double s = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - c;
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    s += k[i];
  }
  for (auto& v : k) v /= s;
  return k;
}

std::size_t blur_kernel_size(std::size_t out_size) {
  const double target = static_cast<double>(out_size) / 10.0;
  auto k = static_cast<std::size_t>(std::floor(target));
  if (k % 2 == 0) k = (target - static_cast<double>(k) >= 0.5 || k == 0) ? k + 1 : k - 1;
  return std::max<std::size_t>(k, 3);
}

FrameSequence blur_frames(const FrameSequence& f, double sigma, std::size_t kernel_size) {
  const auto k = gaussian_kernel(sigma, kernel_size);
  const auto half = static_cast<std::ptrdiff_t>(kernel_size / 2);
  const std::size_t H = f.height, W = f.width;
  FrameSequence out = f;
  std::vector<double> tmp(H * W * 3);
  for (std::size_t t = 0; t < f.frames; ++t) {
    const float* src = f.frame(t);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        for (std::size_t c = 0; c < 3; ++c) {
          double acc = 0.0;
          for (std::ptrdiff_t i = -half; i <= half; ++i) {
            const auto xx = reflect(static_cast<std::ptrdiff_t>(x) + i, W);
            acc += k[static_cast<std::size_t>(i + half)] * src[(y * W + xx) * 3 + c];
          }
          tmp[(y * W + x) * 3 + c] = acc;
        }
    float* dst = out.frame(t);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        for (std::size_t c = 0; c < 3; ++c) {
          double acc = 0.0;
          for (std::ptrdiff_t i = -half; i <= half; ++i) {
            const auto yy = reflect(static_cast<std::ptrdiff_t>(y) + i, H);
            acc += k[static_cast<std::size_t>(i + half)] * tmp[(yy * W + x) * 3 + c];
          }
          dst[(y * W + x) * 3 + c] = clamp01(acc);
        }
  }
  return out;
}

FrameSequence gaussian_blur(const FrameSequence& f, double p, Rng& rng, std::size_t out_size,
                            std::array<double, 2> sigma_range, double* sigma) {
  if (!rng.bernoulli(p)) {
    if (sigma) *sigma = 0.0;
    return f;
  }
  const double s = rng.uniform(sigma_range[0], sigma_range[1]);
  if (sigma) *sigma = s;
  return blur_frames(f, s, blur_kernel_size(out_size));
}

FrameSequence cutout(const FrameSequence& f, std::size_t max_size, std::size_t num, Rng& rng,
                     std::vector<CutoutPatch>* patches) {
  if (num == 0) return f;
  if (max_size >= std::min(f.height, f.width)) {
    throw ShapeError("cutout: max size " + std::to_string(max_size) + " must be below the frame size");
  }
  std::array<double, 3> mean{};
  const std::size_t px = f.height * f.width;
  for (std::size_t i = 0; i < px; ++i)
    for (std::size_t c = 0; c < 3; ++c) mean[c] += f.frame(0)[i * 3 + c];
  CutoutPatch proto;
  for (std::size_t c = 0; c < 3; ++c) proto.fill[c] = static_cast<float>(mean[c] / static_cast<double>(px));

  FrameSequence out = f;
  for (std::size_t n = 0; n < num; ++n) {
    const auto side = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(max_size)));
    const auto cy = rng.uniform_int(0, static_cast<std::int64_t>(f.height) - 1);
    const auto cx = rng.uniform_int(0, static_cast<std::int64_t>(f.width) - 1);
    const auto half = static_cast<std::int64_t>(side / 2);
    CutoutPatch p = proto;
    p.y0 = static_cast<std::size_t>(std::max<std::int64_t>(0, cy - half));
    p.x0 = static_cast<std::size_t>(std::max<std::int64_t>(0, cx - half));
    p.y1 = static_cast<std::size_t>(std::min<std::int64_t>(static_cast<std::int64_t>(f.height), cy - half + static_cast<std::int64_t>(side)));
    p.x1 = static_cast<std::size_t>(std::min<std::int64_t>(static_cast<std::int64_t>(f.width), cx - half + static_cast<std::int64_t>(side)));
    if (patches) patches->push_back(p);
    for (std::size_t t = 0; t < f.frames; ++t)
      for (std::size_t y = p.y0; y < p.y1; ++y)
        for (std::size_t x = p.x0; x < p.x1; ++x)
          for (std::size_t c = 0; c < 3; ++c) out.at(t, y, x, c) = p.fill[c];
  }
  return out;
}

FrameSequence augment_video(const FrameSequence& f, const VideoAugParams& p, AugMode mode, Rng& rng,
                            VideoAugTrace* trace) {
  const bool tc = p.temporal_consistency;
  const std::size_t out_size = p.multi_scale_crop.out_size;
  FrameSequence s;
  if (p.multi_scale_crop.enabled) {
    s = multi_scale_crop(f, p.multi_scale_crop.min_area, out_size, tc, rng, trace ? &trace->crops : nullptr,
                         p.multi_scale_crop.aspect);
    if (trace) ++trace->crop_calls;
  } else {
    s = resize(f, out_size, out_size);
  }
  if (p.horizontal_flip.enabled) {
    s = horizontal_flip(s, p.horizontal_flip.p, tc, rng, trace ? &trace->flips : nullptr);
    if (trace) ++trace->flip_calls;
  }
  if (p.color_jitter.enabled) {
    const auto& cj = p.color_jitter;
    s = color_jitter(s, cj.brightness, cj.contrast, cj.saturation, cj.hue, tc, rng, trace ? &trace->jitters : nullptr);
    if (trace) ++trace->jitter_calls;
  }
  if (p.gray_scale.enabled) {
    s = gray_scale(s, p.gray_scale.p, rng, trace ? &trace->grayed : nullptr);
    if (trace) ++trace->gray_calls;
  }
  if (p.gaussian_blur.enabled && mode == AugMode::pretrain) {
    double sigma = 0.0;
    s = gaussian_blur(s, p.gaussian_blur.p, rng, out_size, p.gaussian_blur.sigma, &sigma);
    if (trace) {
      ++trace->blur_calls;
      trace->blurred = sigma > 0.0;
      trace->blur_sigma = sigma;
    }
  }
  if (p.cutout.enabled) {
    s = cutout(s, p.cutout.max_size, p.cutout.num, rng, trace ? &trace->patches : nullptr);
    if (trace) ++trace->cutout_calls;
  }
  return s;
}

void to_channel_first(const FrameSequence& f, float* dst) {
  const std::size_t hw = f.height * f.width;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < f.frames; ++t) {
      const float* src = f.frame(t);
      float* d = dst + (c * f.frames + t) * hw;
      for (std::size_t i = 0; i < hw; ++i) d[i] = src[i * 3 + c];
    }
}

}  // namespace avssl::video
