// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "avssl/audio/audio.hpp"
#include "avssl/core/error.hpp"
#include "avssl/eval/evaluation.hpp"
#include "avssl/trainer/views.hpp"
#include "avssl/video/video.hpp"
#include "json.hpp"

namespace avssl::eval {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {
constexpr std::array<std::string_view, 5> kProtocolNames{"video_train", "video_test", "audio_train",
                                                         "audio_test_2s", "audio_test_5s"};
constexpr double kLongAudioWindow = 5.0;
}  // namespace

std::string_view to_string(Protocol p) { return kProtocolNames[static_cast<std::size_t>(p)]; }

Protocol parse_protocol(std::string_view s) {
  for (std::size_t i = 0; i < kProtocolNames.size(); ++i) {
    if (kProtocolNames[i] == s) return static_cast<Protocol>(i);
  }
  throw ConfigError("unknown protocol '" + std::string(s) +
                    "' (expected video_train, video_test, audio_train, audio_test_2s or audio_test_5s)");
}

model::Modality modality(Protocol p) {
  return p == Protocol::video_train || p == Protocol::video_test ? model::Modality::video : model::Modality::audio;
}

std::size_t clips_per_sample(Protocol p) {
  switch (p) {
    case Protocol::video_train: return 25;
    case Protocol::video_test: return 10;
    case Protocol::audio_train: return 10;
    case Protocol::audio_test_2s: return 10;
    case Protocol::audio_test_5s: return 1;
  }
  return 0;
}

bool augmented(Protocol p) { return p == Protocol::video_train || p == Protocol::audio_train; }

data::Split default_split(Protocol p) { return augmented(p) ? data::Split::train : data::Split::test; }

std::pair<Protocol, Protocol> probe_protocols(model::Modality m) {
  return m == model::Modality::video ? std::pair{Protocol::video_train, Protocol::video_test}
                                     : std::pair{Protocol::audio_train, Protocol::audio_test_2s};
}

void FeatureMatrix::append(const float* r, std::string sample_id, std::size_t clip, int label) {
  values.insert(values.end(), r, r + dim);
  sample_ids.push_back(std::move(sample_id));
  clip_index.push_back(clip);
  labels.push_back(label);
}

void FeatureMatrix::check() const {
  const std::size_t n = sample_ids.size();
  if (values.size() != n * dim || clip_index.size() != n || labels.size() != n) {
    throw ShapeError("feature matrix arrays disagree: " + std::to_string(n) + " ids, " +
                     std::to_string(values.size()) + " values for dim " + std::to_string(dim));
  }
}

std::vector<float> pool_features(const Tensor<float>& map, const model::PoolSpec& spec) {
  if (map.rank() != 4) throw ShapeError("pool_features expects a [C, T, H, W] map, got " + shape_string(map.shape()));
  const auto& w = spec.window;
  const std::size_t c = map.dim(0);
  const std::array<std::size_t, 3> in{map.dim(1), map.dim(2), map.dim(3)};
  std::array<std::size_t, 3> out{};
  for (std::size_t a = 0; a < 3; ++a) {
    if (w.kernel[a] > in[a] + 2 * w.pad[a]) {
      throw ShapeError("pool kernel " + spec.describe() + " larger than map " + shape_string(map.shape()));
    }
    out[a] = w.out_extent(a, in[a]);
  }
  std::vector<float> v;
  v.reserve(c * out[0] * out[1] * out[2]);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* src = map.data() + ch * in[0] * in[1] * in[2];
    for (std::size_t t = 0; t < out[0]; ++t) {
      for (std::size_t y = 0; y < out[1]; ++y) {
        for (std::size_t x = 0; x < out[2]; ++x) {
          float best = -std::numeric_limits<float>::infinity();
          for (std::size_t kt = 0; kt < w.kernel[0]; ++kt) {
            const long it = static_cast<long>(t * w.stride[0] + kt) - static_cast<long>(w.pad[0]);
            if (it < 0 || it >= static_cast<long>(in[0])) continue;
            for (std::size_t ky = 0; ky < w.kernel[1]; ++ky) {
              const long iy = static_cast<long>(y * w.stride[1] + ky) - static_cast<long>(w.pad[1]);
              if (iy < 0 || iy >= static_cast<long>(in[1])) continue;
              for (std::size_t kx = 0; kx < w.kernel[2]; ++kx) {
                const long ix = static_cast<long>(x * w.stride[2] + kx) - static_cast<long>(w.pad[2]);
                if (ix < 0 || ix >= static_cast<long>(in[2])) continue;
                best = std::max(best, src[(static_cast<std::size_t>(it) * in[1] + static_cast<std::size_t>(iy)) * in[2] +
                                          static_cast<std::size_t>(ix)]);
              }
            }
          }
          v.push_back(best);
        }
      }
    }
  }
  return v;
}

std::vector<data::TimeWindow> protocol_windows(Protocol p, double dur, const data::RunConfig& cfg, Rng& rng) {
  const double w = p == Protocol::audio_test_5s           ? kLongAudioWindow
                   : modality(p) == model::Modality::video ? cfg.sampler.video_win_s
                                                           : cfg.sampler.audio_win_s;
  if (dur + 1e-9 < w) {
    throw RangeError("clip of " + std::to_string(dur) + " s is shorter than the " + std::to_string(w) +
                     " s window required by " + std::string(to_string(p)));
  }
  const double span = std::max(0.0, dur - w);
  const std::size_t n = clips_per_sample(p);
  std::vector<data::TimeWindow> out;
  for (std::size_t i = 0; i < n; ++i) {
    double start = 0.0;
    if (augmented(p)) {
      start = rng.uniform(0.0, span);
    } else if (n == 1) {
      start = 0.5 * span;
    } else {
      start = span * static_cast<double>(i) / static_cast<double>(n - 1);
    }
    out.push_back({start, w});
  }
  return out;
}

namespace {

// Max over equal-ish bins of the last axis so a long map matches a reference width.
Tensor<float> reduce_time(const Tensor<float>& map, std::size_t width) {
  const std::size_t last = map.dim(map.rank() - 1);
  if (last == width) return map;
  if (last < width) throw ShapeError("map narrower than the reference width");
  Shape s = map.shape();
  s.back() = width;
  Tensor<float> out(s);
  const std::size_t outer = map.size() / last;
  for (std::size_t o = 0; o < outer; ++o) {
    const float* src = map.data() + o * last;
    float* dst = out.data() + o * width;
    for (std::size_t i = 0; i < width; ++i) {
      const std::size_t lo = i * last / width, hi = ((i + 1) * last + width - 1) / width;
      float best = src[lo];
      for (std::size_t k = lo + 1; k < hi; ++k) best = std::max(best, src[k]);
      dst[i] = best;
    }
  }
  return out;
}

Tensor<float> sample_slice(const Tensor<float>& batch, std::size_t b) {
  Shape s(batch.shape().begin() + 1, batch.shape().end());
  const std::size_t n = batch.row_size();
  return Tensor<float>(s, std::vector<float>(batch.data() + b * n, batch.data() + (b + 1) * n));
}

}  // namespace

FeatureMatrix extract_frozen_features(model::Network<float>& net, const data::RunConfig& cfg,
                                      const data::DatasetManifest& manifest, Protocol protocol,
                                      const ExtractOptions& options) {
  const auto split = options.split.value_or(default_split(protocol));
  const auto entries = manifest.split(split);
  const auto mod = modality(protocol);
  const auto pool = model::feature_pool_spec(net.config().preset, mod);
  const bool aug = augmented(protocol);
  const std::size_t bs = std::max<std::size_t>(1, options.batch_size);

  auto vparams = aug ? cfg.video_aug : video::VideoAugParams::none();
  vparams.multi_scale_crop.out_size = cfg.video_aug.multi_scale_crop.out_size;
  const auto aparams = aug ? cfg.audio_aug : audio::AudioAugParams::none();

  FeatureMatrix fm;
  fm.protocol = std::string(to_string(protocol));
  fm.pool = pool.describe();

  // Width of the 2 s map, for the long-window protocol.
  std::size_t ref_width = 0;
  if (protocol == Protocol::audio_test_5s) {
    const std::size_t t = trainer::spectrogram_frames(cfg.sampler.audio_win_s, cfg.mel);
    auto probe = net.audio_feature_map(nn::constant(Tensor<float>({1, 1, cfg.mel.n_mels, t})), false);
    ref_width = probe->value.shape().back();
  }

  struct Pending {
    std::string id;
    std::size_t clip;
    int label;
  };
  std::vector<float> buf;
  Shape item_shape;
  std::vector<Pending> pending;
  auto flush = [&]() {
    if (pending.empty()) return;
    Shape s{pending.size()};
    s.insert(s.end(), item_shape.begin(), item_shape.end());
    auto x = nn::constant(Tensor<float>(s, std::move(buf)));
    buf.clear();
    auto map = mod == model::Modality::video ? net.video_feature_map(x, false) : net.audio_feature_map(x, false);
    Tensor<float> m = map->value;
    if (ref_width) m = reduce_time(m, ref_width);
    for (std::size_t b = 0; b < pending.size(); ++b) {
      const auto f = pool_features(sample_slice(m, b), pool);
      if (fm.dim == 0) fm.dim = f.size();
      fm.append(f.data(), pending[b].id, pending[b].clip, pending[b].label);
    }
    pending.clear();
  };

  const auto proto_tag = static_cast<std::uint64_t>(protocol);
  for (std::size_t si = 0; si < entries.size(); ++si) {
    const auto& e = *entries[si];
    Rng wrng = Rng::derive(options.seed, {proto_tag, si, 0});
    const auto windows = protocol_windows(protocol, e.duration_s, cfg, wrng);
    trainer::ClipReader reader(manifest, e, cfg.sample_rate_hz);
    for (std::size_t ci = 0; ci < windows.size(); ++ci) {
      Rng rng = Rng::derive(options.seed, {proto_tag, si, ci + 1});
      if (mod == model::Modality::video) {
        auto frames = reader.video(windows[ci], cfg.video_fps);
        auto out = video::augment_video(frames, vparams, audio::AugMode::eval_feature, rng);
        item_shape = {3, out.frames, out.height, out.width};
        const std::size_t off = buf.size();
        buf.resize(off + 3 * out.frames * out.height * out.width);
        video::to_channel_first(out, buf.data() + off);
      } else {
        auto wave = reader.audio(windows[ci]);
        auto spec = audio::augment_audio(wave, aparams, audio::AugMode::eval_feature, rng, cfg.mel);
        item_shape = {1, spec.n_mels, spec.frames};
        buf.insert(buf.end(), spec.values.begin(), spec.values.end());
      }
      pending.push_back({e.clip_id, ci, e.label.value_or(-1)});
      if (pending.size() == bs) flush();
    }
  }
  flush();
  return fm;
}

// --- on-disk form ---------------------------------------------------------------

namespace {
constexpr char kFeatureMagic[4] = {'A', 'V', 'F', 'M'};
constexpr std::uint16_t kFeatureVersion = 1;

fs::path sidecar(const fs::path& p) { return fs::path(p.string() + ".json"); }
}  // namespace

void save_features(const fs::path& path, const FeatureMatrix& f) {
  f.check();
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + path.string());
    const std::uint64_t n = f.rows(), d = f.dim;
    const std::uint8_t dtype = 1;
    os.write(kFeatureMagic, 4);
    os.write(reinterpret_cast<const char*>(&kFeatureVersion), 2);
    os.write(reinterpret_cast<const char*>(&n), 8);
    os.write(reinterpret_cast<const char*>(&d), 8);
    os.write(reinterpret_cast<const char*>(&dtype), 1);
    os.write(reinterpret_cast<const char*>(f.values.data()), static_cast<std::streamsize>(f.values.size() * 4));
    if (!os) throw IoError("failed writing " + path.string());
  }
  ordered_json j;
  j["protocol"] = f.protocol;
  j["pool"] = f.pool;
  j["rows"] = f.rows();
  j["dim"] = f.dim;
  j["sample_ids"] = f.sample_ids;
  j["clip_index"] = f.clip_index;
  j["labels"] = f.labels;
  std::ofstream js(sidecar(path), std::ios::trunc);
  js << j.dump() << '\n';
  if (!js) throw IoError("failed writing " + sidecar(path).string());
}

FeatureMatrix load_features(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kFeatureMagic, 4) != 0) {
    throw IoError(path.string() + ": bad magic bytes at offset 0 (expected AVFM)");
  }
  std::uint16_t version = 0;
  std::uint64_t n = 0, d = 0;
  std::uint8_t dtype = 0;
  is.read(reinterpret_cast<char*>(&version), 2);
  is.read(reinterpret_cast<char*>(&n), 8);
  is.read(reinterpret_cast<char*>(&d), 8);
  is.read(reinterpret_cast<char*>(&dtype), 1);
  if (!is) throw IoError(path.string() + ": truncated feature header");
  if (version != kFeatureVersion || dtype != 1) throw IoError(path.string() + ": unsupported feature file version");
  FeatureMatrix f;
  f.dim = d;
  if (fs::file_size(path) < 23 + n * d * 4) throw IoError(path.string() + ": truncated feature block");
  f.values.resize(n * d);
  is.read(reinterpret_cast<char*>(f.values.data()), static_cast<std::streamsize>(n * d * 4));
  if (!is) throw IoError(path.string() + ": truncated feature block");

  std::ifstream js(sidecar(path));
  if (!js) throw IoError("missing feature sidecar " + sidecar(path).string());
  try {
    const auto j = ordered_json::parse(js);
    f.protocol = j.at("protocol");
    f.pool = j.at("pool");
    f.sample_ids = j.at("sample_ids").get<std::vector<std::string>>();
    f.clip_index = j.at("clip_index").get<std::vector<std::size_t>>();
    f.labels = j.at("labels").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(sidecar(path).string() + ": malformed sidecar (" + e.what() + ")");
  }
  if (f.sample_ids.size() != n) throw IoError(sidecar(path).string() + ": row count disagrees with the block");
  f.check();
  return f;
}

}  // namespace avssl::eval
