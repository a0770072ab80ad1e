// SPDX-License-Identifier: Apache-2.0
#include "avssl/trainer/views.hpp"

#include <cmath>
#include <cstring>

#include "avssl/audio/audio.hpp"
#include "avssl/core/error.hpp"
#include "avssl/sampling/sampling.hpp"
#include "avssl/video/video.hpp"

namespace avssl::trainer {

ClipReader::ClipReader(const data::DatasetManifest& manifest, const data::ManifestEntry& entry,
                       double sample_rate_hz)
    : manifest_(&manifest), entry_(&entry), sample_rate_hz_(sample_rate_hz) {}

data::WaveformClip ClipReader::audio(const TimeWindow& w) {
  if (!wave_) {
    auto wave = data::read_wav(manifest_->resolve(entry_->audio_path));
    if (std::abs(wave.sample_rate_hz - sample_rate_hz_) > 1e-9) wave = audio::resample(wave, sample_rate_hz_);
    wave_ = std::move(wave);
  }
  return sampling::extract_audio_segment(*wave_, w);
}

data::FrameSequence ClipReader::video(const TimeWindow& w, double fps) {
  data::AvcxReader reader(manifest_->resolve(entry_->video_path));
  const auto& h = reader.header();
  return reader.read(sampling::video_frame_indices(h.fps, h.frames, w, fps), fps);
}

std::size_t spectrogram_frames(double window_s, const audio::MelConfig& mel) {
  return static_cast<std::size_t>(std::llround(window_s * 1000.0 / mel.hop_ms));
}

std::size_t video_window_frames(double window_s, double fps) {
  return static_cast<std::size_t>(std::llround(window_s * fps));
}

ViewBatch build_view_batch(const data::RunConfig& cfg, const data::DatasetManifest& manifest,
                           const std::vector<const data::ManifestEntry*>& clips, std::uint64_t step_seed) {
  const bool need_video = cfg.loss_mask.needs_video();
  const bool need_audio = cfg.loss_mask.needs_audio();
  const std::size_t vt = video_window_frames(cfg.sampler.video_win_s, cfg.video_fps);
  const std::size_t vs = cfg.video_aug.multi_scale_crop.out_size;
  const std::size_t af = cfg.mel.n_mels;
  const std::size_t at = spectrogram_frames(cfg.sampler.audio_win_s, cfg.mel);
  const std::size_t vsize = 3 * vt * vs * vs;

  ViewBatch batch;
  std::vector<float> v[2], a[2];
  for (std::size_t i = 0; i < clips.size(); ++i) {
    Rng rng = Rng::derive(step_seed, {i});
    sampling::ViewPair pair;
    try {
      pair = sampling::sample_view_pair(cfg.sampler, clips[i]->duration_s, rng);
    } catch (const InfeasibleClip&) {
      batch.skipped.push_back(clips[i]->clip_id);
      continue;
    }
    ClipReader reader(manifest, *clips[i], cfg.sample_rate_hz);
    for (int k = 0; k < 2; ++k) {
      if (need_video) {
        auto frames = reader.video(pair.video_windows[k], cfg.video_fps);
        auto out = video::augment_video(frames, cfg.video_aug, audio::AugMode::pretrain, rng);
        if (out.frames != vt || out.height != vs || out.width != vs) {
          throw ShapeError("clip '" + clips[i]->clip_id + "' produced a video view of the wrong size");
        }
        const std::size_t off = v[k].size();
        v[k].resize(off + vsize);
        video::to_channel_first(out, v[k].data() + off);
      }
      if (need_audio) {
        auto wave = reader.audio(pair.audio_windows[k]);
        auto spec = audio::augment_audio(wave, cfg.audio_aug, audio::AugMode::pretrain, rng, cfg.mel);
        if (spec.n_mels != af || spec.frames != at) {
          throw ShapeError("clip '" + clips[i]->clip_id + "' produced a spectrogram of the wrong size");
        }
        a[k].insert(a[k].end(), spec.values.begin(), spec.values.end());
      }
    }
    batch.clip_ids.push_back(clips[i]->clip_id);
  }

  const std::size_t b = batch.size();
  if (b == 0) return batch;
  auto wrap = [](std::vector<float>& buf, Shape shape) {
    return nn::constant(Tensor<float>(std::move(shape), std::move(buf)));
  };
  if (need_video) {
    batch.v1 = wrap(v[0], {b, 3, vt, vs, vs});
    batch.v2 = wrap(v[1], {b, 3, vt, vs, vs});
  }
  if (need_audio) {
    batch.a1 = wrap(a[0], {b, 1, af, at});
    batch.a2 = wrap(a[1], {b, 1, af, at});
  }
  return batch;
}

}  // namespace avssl::trainer
