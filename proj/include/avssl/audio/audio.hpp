// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "avssl/core/rng.hpp"
#include "avssl/data/media.hpp"

namespace avssl::audio {

using data::WaveformClip;

/// n_mels x frames log-power matrix, row-major (one row per mel band).
struct MelSpectrogram {
  std::size_t n_mels = 0;
  std::size_t frames = 0;
  double hop_ms = 10.0;
  std::size_t fft_len = 1024;
  std::vector<float> values;

  float& at(std::size_t m, std::size_t t) { return values[m * frames + t]; }
  float at(std::size_t m, std::size_t t) const { return values[m * frames + t]; }
  double mean() const;
  bool operator==(const MelSpectrogram&) const = default;
};

struct MelConfig {
  std::size_t n_mels = 80;
  double hop_ms = 10.0;
  std::size_t fft_len = 1024;
  double fmin_hz = 0.0;
  double fmax_hz = 0.0;  // 0 = Nyquist
  double log_eps = 1e-6;
  /// Per-clip zero-mean / unit-variance normalization after the log.
  bool normalize = false;
};

inline constexpr double kLogEps = 1e-6;

struct AudioAugParams {
  struct {
    bool enabled = true;
    double range = 0.2;
  } volume_jitter;
  struct {
    bool enabled = true;
    std::size_t max_size = 20;
    std::size_t num = 2;
  } time_mask;
  struct {
    bool enabled = true;
    std::size_t max_size = 10;
    std::size_t num = 2;
  } freq_mask;
  struct {
    bool enabled = true;
    std::size_t window = 20;
  } time_warp;
  struct {
    bool enabled = true;
    std::array<double, 2> range{0.6, 1.5};
    /// Virtual canvas factors (frequency, time).
    std::array<double, 2> crop_scale{1.0, 1.5};
  } random_crop;

  /// Every augmentation disabled.
  static AudioAugParams none();
};

std::vector<std::string> validate(const AudioAugParams& p);

enum class AugMode { pretrain, eval_feature };

/// Records which stages ran and with which random draws.
struct AudioAugTrace {
  int volume_jitter_calls = 0, random_crop_calls = 0, time_mask_calls = 0, freq_mask_calls = 0,
      time_warp_calls = 0;
  double gain = 1.0;
  std::vector<std::array<std::size_t, 2>> time_bands, freq_bands;  // {start, width}
  std::size_t warp_pivot = 0;
  long warp_shift = 0;
  double crop_factor = 1.0;
  std::size_t crop_start = 0, crop_width = 0;
};

/// Windowed-sinc band-limited resampling; throws ConfigError on upsampling.
WaveformClip resample(const WaveformClip& wave, double target_hz);

/// Scales samples by g ~ U[1 - range, 1 + range]; g is written to *gain.
WaveformClip volume_jitter(const WaveformClip& wave, double range, Rng& rng, double* gain = nullptr);

/// Center-padded Hann-window STFT, mel filterbank, log(power + eps); exactly
/// round(duration_ms / hop_ms) frames. Throws ShapeError when the waveform is
/// shorter than fft_len.
MelSpectrogram mel_spectrogram(const WaveformClip& wave, const MelConfig& cfg = {});

/// Triangular filters, n_mels x (fft_len / 2 + 1), area-normalized on the
/// Slaney mel scale.
std::vector<std::vector<double>> mel_filterbank(std::size_t n_mels, std::size_t fft_len, double sample_rate,
                                                double fmin, double fmax);

MelSpectrogram time_mask(const MelSpectrogram& spec, std::size_t max_size, std::size_t num, Rng& rng,
                         std::vector<std::array<std::size_t, 2>>* bands = nullptr);
MelSpectrogram freq_mask(const MelSpectrogram& spec, std::size_t max_size, std::size_t num, Rng& rng,
                         std::vector<std::array<std::size_t, 2>>* bands = nullptr);

/// Random pivot in [window, T - window] moved by U{-window..window}.
MelSpectrogram time_warp(const MelSpectrogram& spec, std::size_t window, Rng& rng, std::size_t* pivot = nullptr,
                         long* shift = nullptr);
/// Deterministic core of time_warp.
MelSpectrogram time_warp_at(const MelSpectrogram& spec, std::size_t pivot, long shift);

MelSpectrogram random_crop_spec(const MelSpectrogram& spec, std::array<double, 2> range,
                                std::array<double, 2> crop_scale, Rng& rng, AudioAugTrace* trace = nullptr);

/// volume jitter -> mel -> random crop -> time mask -> freq mask -> time warp
/// (eval_feature mode only).
MelSpectrogram augment_audio(const WaveformClip& wave, const AudioAugParams& params, AugMode mode, Rng& rng,
                             const MelConfig& mel = {}, AudioAugTrace* trace = nullptr);

}  // namespace avssl::audio
