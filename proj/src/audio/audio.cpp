// SPDX-License-Identifier: Apache-2.0
#include "avssl/audio/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numbers>
#include <string>
#include <tuple>

#include "avssl/core/error.hpp"

namespace avssl::audio {

namespace {

constexpr double kPi = std::numbers::pi;

double sinc(double x) { return x == 0.0 ? 1.0 : std::sin(kPi * x) / (kPi * x); }

// Blackman window on [-1, 1].
double blackman(double u) {
  if (u <= -1.0 || u >= 1.0) return 0.0;
  const double a = kPi * (u + 1.0);
  return 0.42 - 0.5 * std::cos(a) + 0.08 * std::cos(2.0 * a);
}

double hz_to_mel(double f) {
  constexpr double f_sp = 200.0 / 3.0, min_log_hz = 1000.0, min_log_mel = 15.0;
  const double logstep = std::log(6.4) / 27.0;
  return f < min_log_hz ? f / f_sp : min_log_mel + std::log(f / min_log_hz) / logstep;
}

double mel_to_hz(double m) {
  constexpr double f_sp = 200.0 / 3.0, min_log_hz = 1000.0, min_log_mel = 15.0;
  const double logstep = std::log(6.4) / 27.0;
  return m < min_log_mel ? f_sp * m : min_log_hz * std::exp(logstep * (m - min_log_mel));
}

// One cached FFTW plan per transform length. Plans execute on their own
// buffers, so no alignment assumptions leak to callers.
struct FftPlan {
  std::size_t n;
  double* in;
  fftw_complex* out;
  fftw_plan plan;

  explicit FftPlan(std::size_t len) : n(len) {
    in = fftw_alloc_real(n);
    out = fftw_alloc_complex(n / 2 + 1);
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
  }
  ~FftPlan() {
    fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;
};

FftPlan& plan_for(std::size_t n) {
  static std::map<std::size_t, std::unique_ptr<FftPlan>> cache;
  auto& p = cache[n];
  if (!p) p = std::make_unique<FftPlan>(n);
  return *p;
}

struct Filterbank {
  std::vector<std::vector<double>> weights;
  std::vector<std::size_t> lo, hi;  // non-zero bin range per filter
};

const Filterbank& cached_filterbank(std::size_t n_mels, std::size_t n_fft, double sr, double fmin, double fmax) {
  using Key = std::tuple<std::size_t, std::size_t, double, double, double>;
  static std::map<Key, Filterbank> cache;
  const Key key{n_mels, n_fft, sr, fmin, fmax};
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  Filterbank fb;
  fb.weights = mel_filterbank(n_mels, n_fft, sr, fmin, fmax);
  for (const auto& w : fb.weights) {
    std::size_t a = 0, b = 0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      if (w[k] != 0.0) {
        if (b == 0) a = k;
        b = k + 1;
      }
    }
    fb.lo.push_back(a);
    fb.hi.push_back(b);
  }
  return cache.emplace(key, std::move(fb)).first->second;
}

double linear_sample(const float* row, std::size_t n, double x) {
  if (x <= 0.0) return row[0];
  if (x >= static_cast<double>(n - 1)) return row[n - 1];
  const auto i = static_cast<std::size_t>(x);
  const double f = x - static_cast<double>(i);
  return (1.0 - f) * row[i] + f * row[i + 1];
}

}  // namespace

double MelSpectrogram::mean() const {
  double s = 0.0;
  for (float v : values) s += v;
  return values.empty() ? 0.0 : s / static_cast<double>(values.size());
}

AudioAugParams AudioAugParams::none() {
  AudioAugParams p;
  p.volume_jitter.enabled = false;
  p.time_mask.enabled = false;
  p.freq_mask.enabled = false;
  p.time_warp.enabled = false;
  p.random_crop.enabled = false;
  return p;
}

std::vector<std::string> validate(const AudioAugParams& p) {
  std::vector<std::string> v;
  if (!(p.volume_jitter.range >= 0.0 && p.volume_jitter.range < 1.0)) {
    v.push_back("volume jitter range must be in [0, 1)");
  }
  if (p.time_mask.max_size == 0) v.push_back("time mask max size must be positive");
  if (p.freq_mask.max_size == 0) v.push_back("frequency mask max size must be positive");
  if (p.time_warp.window == 0) v.push_back("time warp window must be positive");
  const auto& rc = p.random_crop;
  if (!(rc.range[0] > 0.0 && rc.range[0] <= rc.range[1])) {
    v.push_back("random crop range must satisfy 0 < low <= high");
  }
  if (!(rc.crop_scale[0] >= 1.0 && rc.crop_scale[1] >= 1.0)) {
    v.push_back("random crop canvas scales must be >= 1");
  }
  return v;
}

WaveformClip resample(const WaveformClip& wave, double target_hz) {
  const double src = wave.sample_rate_hz;
  if (!(target_hz > 0.0) || target_hz > src) {
    throw ConfigError("resample: target rate " + std::to_string(target_hz) + " Hz exceeds source " +
                      std::to_string(src) + " Hz (upsampling is not supported)");
  }
  if (target_hz == src) return wave;
  const double ratio = target_hz / src;
  const auto n_in = wave.samples.size();
  const auto n_out = static_cast<std::size_t>(std::llround(static_cast<double>(n_in) * ratio));
  const double fc = 0.5 * ratio * 0.95;    // cutoff, cycles per source sample
  const double half = 24.0 / (2.0 * fc);  // kernel half-width in source samples
  WaveformClip out;
  out.sample_rate_hz = target_hz;
  out.samples.resize(n_out);
  for (std::size_t n = 0; n < n_out; ++n) {
    const double t = static_cast<double>(n) / ratio;
    const auto k0 = static_cast<std::ptrdiff_t>(std::ceil(t - half));
    const auto k1 = static_cast<std::ptrdiff_t>(std::floor(t + half));
    double acc = 0.0, wsum = 0.0;
    for (std::ptrdiff_t k = std::max<std::ptrdiff_t>(k0, 0);
         k <= std::min<std::ptrdiff_t>(k1, static_cast<std::ptrdiff_t>(n_in) - 1); ++k) {
      const double d = t - static_cast<double>(k);
      const double h = 2.0 * fc * sinc(2.0 * fc * d) * blackman(d / half);
      acc += h * wave.samples[static_cast<std::size_t>(k)];
      wsum += h;
    }
    // Normalizing by the kernel mass keeps unit DC gain, including at edges.
    out.samples[n] = static_cast<float>(wsum != 0.0 ? acc / wsum : 0.0);
  }
  return out;
}

WaveformClip volume_jitter(const WaveformClip& wave, double range, Rng& rng, double* gain) {
  const double g = rng.uniform(1.0 - range, 1.0 + range);
  if (gain) *gain = g;
  WaveformClip out = wave;
  for (auto& s : out.samples) s = static_cast<float>(s * g);
  return out;
}

std::vector<std::vector<double>> mel_filterbank(std::size_t n_mels, std::size_t fft_len, double sr, double fmin,
                                                double fmax) {
  if (n_mels == 0) throw ConfigError("n_mels must be positive");
  if (fmax <= 0.0) fmax = sr / 2.0;
  const std::size_t bins = fft_len / 2 + 1;
  const double mlo = hz_to_mel(fmin), mhi = hz_to_mel(fmax);
  std::vector<double> hz(n_mels + 2);
  for (std::size_t i = 0; i < hz.size(); ++i) {
    hz[i] = mel_to_hz(mlo + (mhi - mlo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  std::vector<std::vector<double>> w(n_mels, std::vector<double>(bins, 0.0));
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double enorm = 2.0 / (hz[m + 2] - hz[m]);
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sr / static_cast<double>(fft_len);
      const double lower = (f - hz[m]) / (hz[m + 1] - hz[m]);
      const double upper = (hz[m + 2] - f) / (hz[m + 2] - hz[m + 1]);
      w[m][k] = std::max(0.0, std::min(lower, upper)) * enorm;
    }
  }
  return w;
}

MelSpectrogram mel_spectrogram(const WaveformClip& wave, const MelConfig& cfg) {
  const std::size_t n = cfg.fft_len;
  if (n < 2) throw ConfigError("fft_len must be at least 2");
  if (wave.samples.size() < n) {
    throw ShapeError("mel_spectrogram: waveform of " + std::to_string(wave.samples.size()) +
                     " samples is shorter than one analysis window (" + std::to_string(n) + ")");
  }
  const double sr = wave.sample_rate_hz;
  const auto hop = static_cast<std::size_t>(std::llround(sr * cfg.hop_ms / 1000.0));
  if (hop == 0) throw ConfigError("hop shorter than one sample");
  const double duration_ms = 1000.0 * static_cast<double>(wave.samples.size()) / sr;
  const auto frames = static_cast<std::size_t>(std::llround(duration_ms / cfg.hop_ms));
  const auto& fb = cached_filterbank(cfg.n_mels, n, sr, cfg.fmin_hz, cfg.fmax_hz);

  MelSpectrogram out;
  out.n_mels = cfg.n_mels;
  out.frames = frames;
  out.hop_ms = cfg.hop_ms;
  out.fft_len = n;
  out.values.resize(cfg.n_mels * frames);

  std::vector<double> window(n);
  for (std::size_t i = 0; i < n; ++i) window[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) / n);
  auto& plan = plan_for(n);
  std::vector<double> power(n / 2 + 1);
  const auto len = static_cast<std::ptrdiff_t>(wave.samples.size());
  for (std::size_t t = 0; t < frames; ++t) {
    const std::ptrdiff_t origin = static_cast<std::ptrdiff_t>(t * hop) - static_cast<std::ptrdiff_t>(n / 2);
    for (std::size_t i = 0; i < n; ++i) {
      const std::ptrdiff_t s = origin + static_cast<std::ptrdiff_t>(i);
      plan.in[i] = (s >= 0 && s < len) ? window[i] * wave.samples[static_cast<std::size_t>(s)] : 0.0;
    }
    fftw_execute(plan.plan);
    for (std::size_t k = 0; k < power.size(); ++k) {
      power[k] = plan.out[k][0] * plan.out[k][0] + plan.out[k][1] * plan.out[k][1];
    }
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      const auto& w = fb.weights[m];
      for (std::size_t k = fb.lo[m]; k < fb.hi[m]; ++k) e += w[k] * power[k];
      out.values[m * frames + t] = static_cast<float>(std::log(e + cfg.log_eps));
    }
  }
  if (cfg.normalize) {
    const double mu = out.mean();
    double var = 0.0;
    for (float v : out.values) var += (v - mu) * (v - mu);
    const double sd = std::sqrt(var / static_cast<double>(out.values.size()));
    for (auto& v : out.values) v = static_cast<float>(sd > 0.0 ? (v - mu) / sd : 0.0);
  }
  return out;
}

MelSpectrogram time_mask(const MelSpectrogram& spec, std::size_t max_size, std::size_t num, Rng& rng,
                         std::vector<std::array<std::size_t, 2>>* bands) {
  MelSpectrogram out = spec;
  if (num == 0) return out;
  const auto fill = static_cast<float>(spec.mean());
  const std::size_t T = spec.frames;
  for (std::size_t k = 0; k < num; ++k) {
    const auto width = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(std::min(max_size, T))));
    const auto start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(T - width)));
    if (bands) bands->push_back({start, width});
    for (std::size_t m = 0; m < spec.n_mels; ++m)
      for (std::size_t t = start; t < start + width; ++t) out.at(m, t) = fill;
  }
  return out;
}

MelSpectrogram freq_mask(const MelSpectrogram& spec, std::size_t max_size, std::size_t num, Rng& rng,
                         std::vector<std::array<std::size_t, 2>>* bands) {
  MelSpectrogram out = spec;
  if (num == 0) return out;
  const auto fill = static_cast<float>(spec.mean());
  const std::size_t F = spec.n_mels;
  for (std::size_t k = 0; k < num; ++k) {
    const auto width = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(std::min(max_size, F))));
    const auto start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(F - width)));
    if (bands) bands->push_back({start, width});
    for (std::size_t m = start; m < start + width; ++m)
      std::fill_n(out.values.begin() + static_cast<std::ptrdiff_t>(m * spec.frames), spec.frames, fill);
  }
  return out;
}

MelSpectrogram time_warp_at(const MelSpectrogram& spec, std::size_t pivot, long shift) {
  const std::size_t T = spec.frames;
  if (T < 2) throw ShapeError("time_warp: spectrogram too narrow");
  const long target = std::clamp(static_cast<long>(pivot) + shift, 1L, static_cast<long>(T) - 1);
  const double c = static_cast<double>(pivot), cp = static_cast<double>(target);
  const double Td = static_cast<double>(T);
  MelSpectrogram out = spec;
  for (std::size_t m = 0; m < spec.n_mels; ++m) {
    const float* row = spec.values.data() + m * T;
    for (std::size_t j = 0; j < T; ++j) {
      const double jd = static_cast<double>(j);
      const double x = jd < cp ? jd * c / cp : c + (jd - cp) * (Td - c) / (Td - cp);
      out.at(m, j) = static_cast<float>(linear_sample(row, T, x));
    }
  }
  return out;
}

MelSpectrogram time_warp(const MelSpectrogram& spec, std::size_t window, Rng& rng, std::size_t* pivot, long* shift) {
  const std::size_t T = spec.frames;
  if (T <= 2 * window) {
    throw ShapeError("time_warp: " + std::to_string(T) + " frames is too narrow for window " +
                     std::to_string(window));
  }
  const auto c = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(window), static_cast<std::int64_t>(T - window)));
  const auto w = static_cast<long>(rng.uniform_int(-static_cast<std::int64_t>(window), static_cast<std::int64_t>(window)));
  if (pivot) *pivot = c;
  if (shift) *shift = w;
  return time_warp_at(spec, c, w);
}

MelSpectrogram random_crop_spec(const MelSpectrogram& spec, std::array<double, 2> range,
                                std::array<double, 2> crop_scale, Rng& rng, AudioAugTrace* trace) {
  const std::size_t F = spec.n_mels, T = spec.frames;
  const auto canvas_h = std::max<std::size_t>(F, static_cast<std::size_t>(std::floor(F * crop_scale[0])));
  const auto canvas_w = std::max<std::size_t>(T, static_cast<std::size_t>(std::floor(T * crop_scale[1])));
  const double factor = rng.uniform(range[0], range[1]);
  const std::size_t crop_w = std::clamp<std::size_t>(static_cast<std::size_t>(factor * static_cast<double>(T)), 1,
                                                     canvas_w);
  const auto j0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(canvas_w - crop_w)));
  const auto i0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(canvas_h - F)));
  if (trace) {
    trace->crop_factor = factor;
    trace->crop_start = j0;
    trace->crop_width = crop_w;
  }
  // Canvas: content centered, surrounded by the silence floor.
  const auto silence = static_cast<float>(std::log(kLogEps));
  const std::size_t off_h = (canvas_h - F) / 2, off_w = (canvas_w - T) / 2;
  auto canvas = [&](std::size_t r, std::size_t c) -> float {
    if (r < off_h || r >= off_h + F || c < off_w || c >= off_w + T) return silence;
    return spec.at(r - off_h, c - off_w);
  };
  MelSpectrogram out = spec;
  std::vector<float> row(crop_w);
  for (std::size_t m = 0; m < F; ++m) {
    for (std::size_t c = 0; c < crop_w; ++c) row[c] = canvas(i0 + m, j0 + c);
    for (std::size_t j = 0; j < T; ++j) {
      // Half-pixel-centered linear resize from crop_w columns to T.
      const double x = (static_cast<double>(j) + 0.5) * static_cast<double>(crop_w) / static_cast<double>(T) - 0.5;
      out.at(m, j) = static_cast<float>(linear_sample(row.data(), crop_w, x));
    }
  }
  return out;
}

MelSpectrogram augment_audio(const WaveformClip& wave, const AudioAugParams& p, AugMode mode, Rng& rng,
                             const MelConfig& mel, AudioAugTrace* trace) {
  const WaveformClip* src = &wave;
  WaveformClip jittered;
  if (p.volume_jitter.enabled) {
    double g = 1.0;
    jittered = volume_jitter(wave, p.volume_jitter.range, rng, &g);
    src = &jittered;
    if (trace) {
      ++trace->volume_jitter_calls;
      trace->gain = g;
    }
  }
  MelSpectrogram s = mel_spectrogram(*src, mel);
  if (p.random_crop.enabled) {
    s = random_crop_spec(s, p.random_crop.range, p.random_crop.crop_scale, rng, trace);
    if (trace) ++trace->random_crop_calls;
  }
  if (p.time_mask.enabled) {
    s = time_mask(s, p.time_mask.max_size, p.time_mask.num, rng, trace ? &trace->time_bands : nullptr);
    if (trace) ++trace->time_mask_calls;
  }
  if (p.freq_mask.enabled) {
    s = freq_mask(s, p.freq_mask.max_size, p.freq_mask.num, rng, trace ? &trace->freq_bands : nullptr);
    if (trace) ++trace->freq_mask_calls;
  }
  if (p.time_warp.enabled && mode == AugMode::eval_feature) {
    s = time_warp(s, p.time_warp.window, rng, trace ? &trace->warp_pivot : nullptr,
                  trace ? &trace->warp_shift : nullptr);
    if (trace) ++trace->time_warp_calls;
  }
  return s;
}

}  // namespace avssl::audio
