// SPDX-License-Identifier: Apache-2.0
#include "avssl/synth/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>
#include <sstream>

#include "avssl/core/error.hpp"
#include "avssl/core/rng.hpp"
#include "json.hpp"

namespace avssl::synth {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr std::uint64_t kParamStream = 1, kVideoNoiseStream = 2, kAudioNoiseStream = 3, kSplitStream = 4;
constexpr std::array<std::string_view, 8> kShapeNames{"disk", "square", "triangle", "diamond",
                                                      "cross", "ring", "hbar", "vbar"};

std::string rate_label(double hz) {
  std::ostringstream os;
  os << hz << "hz";
  return os.str();
}
}  // namespace

std::string_view to_string(Shape s) { return kShapeNames[static_cast<std::size_t>(s)]; }

std::size_t appearance_groups(const SynthSpec& spec) {
  if (spec.num_rates == 0) return 0;
  return (spec.num_categories + spec.num_rates - 1) / spec.num_rates;
}

std::vector<std::string> validate(const SynthSpec& s) {
  std::vector<std::string> v;
  if (s.num_categories < 2) v.push_back("num_categories must be at least 2");
  if (s.num_rates < 1 || s.num_rates > kMotionRatesHz.size()) v.push_back("num_rates must be in [1, 4]");
  else if (appearance_groups(s) > kMaxAppearanceGroups) v.push_back("num_categories exceeds 8 x num_rates");
  if (s.clips_per_category < 1) v.push_back("clips_per_category must be positive");
  if (!(s.duration_s >= 4.0)) v.push_back("duration_s must be at least 4 (twice the 2 s audio window)");
  if (!(s.fps > 0.0)) v.push_back("fps must be positive");
  if (!(s.sample_rate_hz >= 2.0 * kCarrierBaseHz.back() * kCarrierRatio)) {
    v.push_back("sample_rate_hz too low for the carrier tones");
  }
  if (s.frame_size < 32) v.push_back("frame_size must be at least 32");
  if (s.video_noise_sigma < 0.0) v.push_back("video_noise_sigma must be non-negative");
  if (!(s.test_fraction >= 0.0 && s.test_fraction < 1.0)) v.push_back("test_fraction must be in [0, 1)");
  return v;
}

ClipParams clip_params(const SynthSpec& spec, std::size_t category, std::uint64_t instance) {
  if (category >= spec.num_categories) {
    throw RangeError("category " + std::to_string(category) + " >= " + std::to_string(spec.num_categories));
  }
  const std::size_t groups = appearance_groups(spec);
  const std::size_t g = category % groups;
  ClipParams p;
  p.category = category;
  p.shape = static_cast<Shape>(g);
  p.rate_hz = kMotionRatesHz[category / groups];
  p.carriers_hz = {kCarrierBaseHz[g], kCarrierBaseHz[g] * kCarrierRatio};

  Rng rng = Rng::derive(spec.seed, {kParamStream, category, instance});
  const double size = static_cast<double>(spec.frame_size);
  p.phase = rng.uniform(0.0, kTwoPi);
  p.background = static_cast<float>(rng.uniform(0.05, 0.3));
  for (auto& c : p.color) c = static_cast<float>(rng.uniform(0.45, 1.0));
  p.radius_px = size * rng.uniform(0.12, 0.17);
  p.amplitude_px = 0.25 * size;
  p.center_x = 0.5 * size;
  p.center_y = rng.uniform(p.radius_px + 2.0, size - p.radius_px - 2.0);
  p.tone_phase = {rng.uniform(0.0, kTwoPi), rng.uniform(0.0, kTwoPi)};
  return p;
}

std::array<double, 2> shape_center(const ClipParams& p, double t) {
  return {p.center_x + p.amplitude_px * std::sin(kTwoPi * p.rate_hz * t + p.phase), p.center_y};
}

double envelope(const ClipParams& p, double t) { return 0.5 * (1.0 + std::sin(kTwoPi * p.rate_hz * t + p.phase)); }

bool inside_shape(const ClipParams& p, double t, double x, double y) {
  const auto c = shape_center(p, t);
  const double dx = x + 0.5 - c[0], dy = y + 0.5 - c[1], r = p.radius_px;
  const double ax = std::abs(dx), ay = std::abs(dy);
  switch (p.shape) {
    case Shape::disk: return dx * dx + dy * dy <= r * r;
    case Shape::square: return ax <= 0.8 * r && ay <= 0.8 * r;
    case Shape::triangle: return dy >= -r && dy <= 0.8 * r && ax <= (dy + r) / 1.8;
    case Shape::diamond: return ax + ay <= r;
    case Shape::cross: return (ax <= 0.3 * r && ay <= r) || (ay <= 0.3 * r && ax <= r);
    case Shape::ring: {
      const double d2 = dx * dx + dy * dy;
      return d2 <= r * r && d2 >= 0.36 * r * r;
    }
    case Shape::hbar: return ax <= r && ay <= 0.35 * r;
    case Shape::vbar: return ax <= 0.35 * r && ay <= r;
  }
  return false;
}

data::AVClip render_clip(const SynthSpec& spec, std::size_t category, std::uint64_t instance) {
  if (const auto v = validate(spec); !v.empty()) throw ConfigError("invalid synth spec: " + v.front());
  const ClipParams p = clip_params(spec, category, instance);

  const auto frames = static_cast<std::size_t>(std::llround(spec.duration_s * spec.fps));
  const std::size_t n = spec.frame_size;
  data::FrameSequence video(frames, n, n, spec.fps);
  Rng vnoise = Rng::derive(spec.seed, {kVideoNoiseStream, category, instance});
  for (std::size_t t = 0; t < frames; ++t) {
    const double time = static_cast<double>(t) / spec.fps;
    float* f = video.frame(t);
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        const bool in = inside_shape(p, time, static_cast<double>(x), static_cast<double>(y));
        for (std::size_t c = 0; c < 3; ++c) {
          float v = in ? p.color[c] : p.background;
          if (spec.video_noise_sigma > 0.0) v += static_cast<float>(spec.video_noise_sigma * vnoise.normal());
          f[(y * n + x) * 3 + c] = std::clamp(v, 0.0f, 1.0f);
        }
      }
    }
  }

  const auto samples = static_cast<std::size_t>(std::llround(spec.duration_s * spec.sample_rate_hz));
  data::WaveformClip wave;
  wave.sample_rate_hz = spec.sample_rate_hz;
  wave.samples.resize(samples);
  std::vector<double> clean(samples);
  double power = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double t = static_cast<double>(i) / spec.sample_rate_hz;
    const double tone = std::sin(kTwoPi * p.carriers_hz[0] * t + p.tone_phase[0]) +
                        0.7 * std::sin(kTwoPi * p.carriers_hz[1] * t + p.tone_phase[1]);
    clean[i] = 0.3 * envelope(p, t) * tone;
    power += clean[i] * clean[i];
  }
  power /= static_cast<double>(samples);
  const double sigma = std::isfinite(spec.audio_snr_db) ? std::sqrt(power / std::pow(10.0, spec.audio_snr_db / 10.0)) : 0.0;
  Rng anoise = Rng::derive(spec.seed, {kAudioNoiseStream, category, instance});
  for (std::size_t i = 0; i < samples; ++i) {
    double v = clean[i];
    if (sigma > 0.0) v += sigma * anoise.normal();
    wave.samples[i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
  return data::AVClip::make(std::move(wave), std::move(video), static_cast<int>(category));
}

std::vector<std::string> label_names(const SynthSpec& spec) {
  std::vector<std::string> names;
  const std::size_t groups = appearance_groups(spec);
  for (std::size_t k = 0; k < spec.num_categories; ++k) {
    names.push_back(std::string(kShapeNames[k % groups]) + "_" + rate_label(kMotionRatesHz[k / groups]));
  }
  return names;
}

data::DatasetManifest generate_dataset(const SynthSpec& spec, const fs::path& out_dir) {
  if (const auto v = validate(spec); !v.empty()) {
    std::string msg = "invalid synth spec:";
    for (const auto& s : v) msg += "\n  - " + s;
    throw ConfigError(msg);
  }
  std::error_code ec;
  fs::create_directories(out_dir / "media", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "media").string() + ": " + ec.message());

  data::DatasetManifest m;
  m.base_dir = out_dir;
  m.label_names = label_names(spec);
  const std::size_t n = spec.clips_per_category;
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.test_fraction));
  for (std::size_t k = 0; k < spec.num_categories; ++k) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng = Rng::derive(spec.seed, {kSplitStream, k});
    rng.shuffle(order);
    std::vector<bool> is_test(n, false);
    for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;

    for (std::size_t i = 0; i < n; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "k%zu_%04zu", k, i);
      const auto clip = render_clip(spec, k, i);
      data::ManifestEntry e;
      e.clip_id = id;
      e.audio_path = "media/" + e.clip_id + ".wav";
      e.video_path = "media/" + e.clip_id + ".avcx";
      e.duration_s = clip.duration_s;
      e.label = static_cast<int>(k);
      e.split = is_test[i] ? data::Split::test : data::Split::train;
      data::write_wav(out_dir / e.audio_path, clip.waveform);
      data::write_avcx(out_dir / e.video_path, clip.video);
      m.entries.push_back(std::move(e));
    }
  }
  data::write_manifest(out_dir / kManifestFile, m);
  return m;
}

namespace {
template <typename S, typename F>
void spec_fields(S& s, F&& f) {
  f("num_categories", s.num_categories);
  f("clips_per_category", s.clips_per_category);
  f("num_rates", s.num_rates);
  f("duration_s", s.duration_s);
  f("fps", s.fps);
  f("sample_rate_hz", s.sample_rate_hz);
  f("frame_size", s.frame_size);
  f("audio_snr_db", s.audio_snr_db);
  f("video_noise_sigma", s.video_noise_sigma);
  f("test_fraction", s.test_fraction);
  f("seed", s.seed);
}
}  // namespace

std::string to_json(const SynthSpec& spec) {
  ordered_json j;
  spec_fields(spec, [&](const char* k, const auto& v) { j[k] = v; });
  return j.dump(2);
}

SynthSpec spec_from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("synth spec is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("synth spec must be a JSON object");
  SynthSpec s;
  std::set<std::string> known;
  spec_fields(s, [&](const char* k, auto& v) {
    known.insert(k);
    if (!j.contains(k)) return;
    using V = std::decay_t<decltype(v)>;
    const auto& x = j[k];
    if constexpr (std::is_integral_v<V>) {
      if (!x.is_number_integer() || x.template get<long long>() < 0) {
        throw ConfigError(std::string("synth spec key '") + k + "' must be a non-negative integer");
      }
    } else if (!x.is_number()) {
      throw ConfigError(std::string("synth spec key '") + k + "' must be a number");
    }
    v = x.template get<V>();
  });
  for (const auto& [k, _] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown synth spec key '" + k + "'");
  }
  return s;
}

}  // namespace avssl::synth
