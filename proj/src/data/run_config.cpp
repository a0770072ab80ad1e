// SPDX-License-Identifier: Apache-2.0
#include "avssl/data/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "avssl/core/error.hpp"
#include "json.hpp"

namespace avssl::data {

using nlohmann::ordered_json;

namespace {

// Every serialized field, keyed by its dotted path. Shared by writer and
// reader so the two cannot drift.
template <typename C, typename F>
void fields(C& c, F&& f) {
  f("preset", c.preset);
  f("seed", c.seed);
  f("checkpoint_every", c.checkpoint_every);
  f("loss_mask", c.loss_mask);

  f("sampler.strategy", c.sampler.strategy);
  f("sampler.audio_win_s", c.sampler.audio_win_s);
  f("sampler.video_win_s", c.sampler.video_win_s);

  f("audio.sample_rate_hz", c.sample_rate_hz);
  f("audio.n_mels", c.mel.n_mels);
  f("audio.hop_ms", c.mel.hop_ms);
  f("audio.fft_len", c.mel.fft_len);
  f("audio.fmin_hz", c.mel.fmin_hz);
  f("audio.fmax_hz", c.mel.fmax_hz);
  f("audio.log_eps", c.mel.log_eps);
  f("audio.normalize", c.mel.normalize);
  auto& a = c.audio_aug;
  f("audio.volume_jitter.enabled", a.volume_jitter.enabled);
  f("audio.volume_jitter.range", a.volume_jitter.range);
  f("audio.time_mask.enabled", a.time_mask.enabled);
  f("audio.time_mask.max_size", a.time_mask.max_size);
  f("audio.time_mask.num", a.time_mask.num);
  f("audio.freq_mask.enabled", a.freq_mask.enabled);
  f("audio.freq_mask.max_size", a.freq_mask.max_size);
  f("audio.freq_mask.num", a.freq_mask.num);
  f("audio.time_warp.enabled", a.time_warp.enabled);
  f("audio.time_warp.window", a.time_warp.window);
  f("audio.random_crop.enabled", a.random_crop.enabled);
  f("audio.random_crop.range", a.random_crop.range);
  f("audio.random_crop.crop_scale", a.random_crop.crop_scale);

  f("video.fps", c.video_fps);
  auto& v = c.video_aug;
  f("video.temporal_consistency", v.temporal_consistency);
  f("video.multi_scale_crop.enabled", v.multi_scale_crop.enabled);
  f("video.multi_scale_crop.min_area", v.multi_scale_crop.min_area);
  f("video.multi_scale_crop.aspect", v.multi_scale_crop.aspect);
  f("video.multi_scale_crop.out_size", v.multi_scale_crop.out_size);
  f("video.horizontal_flip.enabled", v.horizontal_flip.enabled);
  f("video.horizontal_flip.p", v.horizontal_flip.p);
  f("video.color_jitter.enabled", v.color_jitter.enabled);
  f("video.color_jitter.brightness", v.color_jitter.brightness);
  f("video.color_jitter.contrast", v.color_jitter.contrast);
  f("video.color_jitter.saturation", v.color_jitter.saturation);
  f("video.color_jitter.hue", v.color_jitter.hue);
  f("video.gray_scale.enabled", v.gray_scale.enabled);
  f("video.gray_scale.p", v.gray_scale.p);
  f("video.gaussian_blur.enabled", v.gaussian_blur.enabled);
  f("video.gaussian_blur.p", v.gaussian_blur.p);
  f("video.gaussian_blur.sigma", v.gaussian_blur.sigma);
  f("video.cutout.enabled", v.cutout.enabled);
  f("video.cutout.max_size", v.cutout.max_size);
  f("video.cutout.num", v.cutout.num);

  f("model.preset", c.model.preset);
  f("model.projector_layers", c.model.projector_layers);
  f("model.predictor_mode", c.model.predictor_mode);
  f("model.backbone_out_dim", c.model.backbone_out_dim);
  f("model.projector_dim", c.model.projector_dim);
  f("model.predictor_bottleneck", c.model.predictor_bottleneck);
  f("model.widths", c.model.widths);

  auto& o = c.optim;
  f("optim.lr_start", o.lr_start);
  f("optim.lr_end", o.lr_end);
  f("optim.predictor_lr_mult", o.predictor_lr_mult);
  f("optim.weight_decay", o.weight_decay);
  f("optim.decoupled_weight_decay", o.decoupled_weight_decay);
  f("optim.beta1", o.beta1);
  f("optim.beta2", o.beta2);
  f("optim.eps", o.eps);
  f("optim.batch_size", o.batch_size);
  f("optim.epoch_size", o.epoch_size);
  f("optim.epochs", o.epochs);
  f("optim.warmup_steps", o.warmup_steps);
  f("optim.trust_ratio", o.trust_ratio);
  f("optim.trust_coefficient", o.trust_coefficient);
}

ordered_json::json_pointer pointer(const std::string& dotted) {
  std::string p = "/" + dotted;
  for (auto& ch : p)
    if (ch == '.') ch = '/';
  return ordered_json::json_pointer(p);
}

template <typename T>
ordered_json encode(const T& v) {
  return v;
}
ordered_json encode(const sampling::Strategy& s) { return std::string(sampling::to_string(s)); }
ordered_json encode(const model::EncoderPreset& p) { return std::string(model::to_string(p)); }
ordered_json encode(const model::PredictorMode& p) { return std::string(model::to_string(p)); }
ordered_json encode(const objective::LossMask& m) { return m.to_string(); }

template <typename T>
void decode(const ordered_json& j, T& out, const std::string& key) {
  try {
    out = j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}
std::string as_string(const ordered_json& j, const std::string& key) {
  if (!j.is_string()) throw ConfigError("config key '" + key + "' must be a string");
  return j.get<std::string>();
}
void decode(const ordered_json& j, sampling::Strategy& s, const std::string& key) {
  s = sampling::parse_strategy(as_string(j, key));
}
void decode(const ordered_json& j, model::EncoderPreset& p, const std::string& key) {
  p = model::parse_encoder_preset(as_string(j, key));
}
void decode(const ordered_json& j, model::PredictorMode& p, const std::string& key) {
  p = model::parse_predictor_mode(as_string(j, key));
}
void decode(const ordered_json& j, objective::LossMask& m, const std::string& key) {
  m = objective::LossMask::parse(as_string(j, key));
}
void decode(const ordered_json& j, std::size_t& v, const std::string& key) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<long long>() >= 0)) {
    throw ConfigError("config key '" + key + "' must be a non-negative integer");
  }
  v = j.get<std::size_t>();
}

void collect_leaves(const ordered_json& j, const std::string& prefix, std::vector<std::string>& out) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) collect_leaves(v, prefix.empty() ? k : prefix + "." + k, out);
  } else {
    out.push_back(prefix);
  }
}

}  // namespace

RunConfig preset(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "desk") return c;
  if (name == "kinetics_sound") {
    c.model.preset = model::EncoderPreset::paper;
    c.optim.batch_size = 512;
    c.optim.epoch_size = 220000;
    c.optim.epochs = 100;
    c.optim.lr_start = 2e-4;
    c.optim.lr_end = 0.0;
    c.optim.predictor_lr_mult = 10.0;
    c.optim.weight_decay = 1e-4;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "' (expected desk or kinetics_sound)");
}

std::vector<std::string> preset_names() { return {"desk", "kinetics_sound"}; }

std::vector<std::string> validate(const RunConfig& c) {
  std::vector<std::string> v;
  auto append = [&](const std::vector<std::string>& more) { v.insert(v.end(), more.begin(), more.end()); };
  append(model::validate(c.model));
  append(sampling::validate(c.sampler));
  append(audio::validate(c.audio_aug));
  append(video::validate(c.video_aug));
  const auto& o = c.optim;
  if (!(o.predictor_lr_mult > 0.0)) v.push_back("predictor LR multiplier must be positive");
  if (!(o.lr_start > 0.0)) v.push_back("encoder start LR must be positive");
  if (o.lr_end < 0.0) v.push_back("encoder end LR must be non-negative");
  if (o.weight_decay < 0.0) v.push_back("weight decay must be non-negative");
  if (!(o.beta1 >= 0.0 && o.beta1 < 1.0) || !(o.beta2 >= 0.0 && o.beta2 < 1.0)) v.push_back("betas must be in [0, 1)");
  if (!(o.eps > 0.0)) v.push_back("optimizer eps must be positive");
  if (o.batch_size == 0) v.push_back("batch size must be positive");
  if (o.batch_size == 1) v.push_back("batch size must be at least 2 (batch-norm statistics)");
  if (o.epoch_size != 0 && o.epoch_size < o.batch_size) v.push_back("epoch size must be at least the batch size");
  if (o.epochs == 0) v.push_back("epochs must be positive");
  if (o.trust_ratio && !(o.trust_coefficient > 0.0)) v.push_back("trust coefficient must be positive");
  if (c.loss_mask.empty()) v.push_back("empty loss mask");
  if (!(c.sample_rate_hz > 0.0)) v.push_back("sample rate must be positive");
  if (!(c.video_fps > 0.0)) v.push_back("video fps must be positive");
  if (c.mel.n_mels == 0) v.push_back("n_mels must be positive");
  if (!(c.mel.hop_ms > 0.0)) v.push_back("hop must be positive");
  return v;
}

const RunConfig& require_valid(const RunConfig& cfg) {
  const auto v = validate(cfg);
  if (v.empty()) return cfg;
  std::string msg = "invalid configuration:";
  for (const auto& s : v) msg += "\n  - " + s;
  throw ConfigError(msg);
}

std::string to_json(const RunConfig& cfg) {
  ordered_json j = ordered_json::object();
  fields(cfg, [&](const char* key, const auto& value) { j[pointer(key)] = encode(value); });
  return j.dump(2);
}

RunConfig config_from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c = preset(j.contains("preset") ? as_string(j["preset"], "preset") : "desk");
  std::set<std::string> known;
  fields(c, [&](const char* key, auto& value) {
    known.insert(key);
    const auto p = pointer(key);
    if (j.contains(p)) decode(j[p], value, key);
  });
  std::vector<std::string> leaves;
  collect_leaves(j, "", leaves);
  for (const auto& k : leaves) {
    if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("config file not found: " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return config_from_json(ss.str());
}

}  // namespace avssl::data
