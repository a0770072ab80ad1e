// SPDX-License-Identifier: Apache-2.0
#include "avssl/model/model.hpp"

#include <cmath>
#include <sstream>

#include "avssl/core/rng.hpp"

namespace avssl::model {

using detail::Backbone;
using detail::Block;
using detail::ConvLayer;
using detail::Unit;
using nn::ModalityTag;
using nn::ParamGroup;
using nn::Window3;

std::string_view to_string(EncoderPreset p) {
  switch (p) {
    case EncoderPreset::tiny:
      return "tiny";
    case EncoderPreset::paper:
      return "paper";
    case EncoderPreset::micro:
      return "micro";
  }
  return "?";
}

std::string_view to_string(PredictorMode m) {
  return m == PredictorMode::separate ? "separate" : "common";
}

std::string_view to_string(Modality m) { return m == Modality::video ? "video" : "audio"; }

EncoderPreset parse_encoder_preset(std::string_view s) {
  if (s == "tiny") return EncoderPreset::tiny;
  if (s == "paper") return EncoderPreset::paper;
  if (s == "micro") return EncoderPreset::micro;
  throw ConfigError("unknown encoder preset '" + std::string(s) + "' (expected tiny, paper or micro)");
}

PredictorMode parse_predictor_mode(std::string_view s) {
  if (s == "separate") return PredictorMode::separate;
  if (s == "common") return PredictorMode::common;
  throw ConfigError("unknown predictor mode '" + std::string(s) + "' (expected separate or common)");
}

ModelConfig ModelConfig::micro() {
  ModelConfig c;
  c.preset = EncoderPreset::micro;
  c.backbone_out_dim = 6;
  c.projector_dim = 8;
  c.predictor_bottleneck = 4;
  c.widths = {2, 3, 3, 4};
  return c;
}

std::vector<std::string> validate(const ModelConfig& cfg) {
  std::vector<std::string> v;
  if (cfg.projector_layers != 2 && cfg.projector_layers != 3) {
    v.push_back("projector depth " + std::to_string(cfg.projector_layers) +
                " not in allowed set {2, 3}");
  }
  if (cfg.preset != EncoderPreset::micro) {
    if (cfg.backbone_out_dim != 512) v.push_back("backbone output dimension must be 512");
    if (cfg.projector_dim != 2048) v.push_back("projector dimension must be 2048");
    if (cfg.predictor_bottleneck != 512) v.push_back("predictor bottleneck must be 512");
  }
  if (cfg.predictor_bottleneck == 0 || cfg.predictor_bottleneck >= cfg.projector_dim) {
    v.push_back("predictor bottleneck must be positive and smaller than the projector dimension");
  }
  if (cfg.backbone_out_dim == 0) v.push_back("backbone output dimension must be positive");
  for (auto w : cfg.widths) {
    if (w == 0) {
      v.push_back("backbone widths must be positive");
      break;
    }
  }
  return v;
}

std::string PoolSpec::describe() const {
  std::ostringstream os;
  const auto& k = window.kernel;
  const auto& s = window.stride;
  os << "max-pool kernel (" << k[0] << "," << k[1] << "," << k[2] << ") stride (" << s[0] << ","
     << s[1] << "," << s[2] << ")";
  return os.str();
}

PoolSpec feature_pool_spec(EncoderPreset preset, Modality m) {
  PoolSpec p;
  if (m == Modality::video) {
    p.window.kernel = {1, 4, 4};
    p.window.stride = preset == EncoderPreset::paper ? std::array<std::size_t, 3>{1, 4, 4}
                                                     : std::array<std::size_t, 3>{1, 3, 3};
    if (preset == EncoderPreset::micro) p.window.kernel = {1, 2, 2}, p.window.stride = {1, 2, 2};
  } else {
    // Audio maps are [C, 1, F, T]; the (1,3)/(1,2) pool acts on (F, T).
    p.window.kernel = {1, 1, 3};
    p.window.stride = {1, 1, 2};
    if (preset == EncoderPreset::micro) p.window.kernel = {1, 1, 2}, p.window.stride = {1, 1, 2};
  }
  return p;
}

namespace {

// Mid-channel count of a factorized (2+1)D conv that matches the parameter
// count of the full t x d x d convolution.
std::size_t factorized_mid(std::size_t t, std::size_t d, std::size_t in, std::size_t out) {
  return (t * d * d * in * out) / (d * d * in + t * out);
}

Window3 win(std::array<std::size_t, 3> k, std::array<std::size_t, 3> s, std::array<std::size_t, 3> p) {
  Window3 w;
  w.kernel = k;
  w.stride = s;
  w.pad = p;
  return w;
}

template <typename T>
class Builder {
 public:
  Builder(nn::ParameterStore<T>& store, std::uint64_t seed, bool initialize)
      : store_(store), rng_(Rng::derive(seed, {0x1417})), init_(initialize) {}

  ModalityTag tag = ModalityTag::video;
  ParamGroup group = ParamGroup::encoder;

  ConvLayer conv(const std::string& name, std::size_t in, std::size_t out, const Window3& w) {
    const auto& k = w.kernel;
    Tensor<T> t({out, in, k[0], k[1], k[2]});
    if (init_) {
      const double std = std::sqrt(2.0 / static_cast<double>(in * k[0] * k[1] * k[2]));
      for (auto& v : t.values()) v = static_cast<T>(std * rng_.normal());
    }
    store_.add(name + ".weight", std::move(t), group, tag);
    return {name + ".weight", w};
  }

  std::string bn(const std::string& name, std::size_t channels, bool affine) {
    if (affine) {
      store_.add(name + ".gamma", Tensor<T>({channels}, T(1)), group, tag);
      store_.add(name + ".beta", Tensor<T>({channels}, T(0)), group, tag);
    }
    store_.add_batch_norm_state(name, channels);
    return name;
  }

  std::string linear(const std::string& name, std::size_t in, std::size_t out, bool bias) {
    Tensor<T> w({out, in});
    if (init_) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      for (auto& v : w.values()) v = static_cast<T>(rng_.uniform(-bound, bound));
    }
    store_.add(name + ".weight", std::move(w), group, tag);
    if (bias) store_.add(name + ".bias", Tensor<T>({out}, T(0)), group, tag);
    return name;
  }

  // Factorized spatial (1,d,d) -> temporal (t,1,1) convolution.
  Unit factorized(const std::string& name, std::size_t in, std::size_t mid, std::size_t out,
                  std::size_t d, std::size_t t, std::size_t s_spatial, std::size_t s_temporal,
                  bool relu) {
    Unit u;
    u.convs.push_back(conv(name + ".conv_s", in, mid,
                           win({1, d, d}, {1, s_spatial, s_spatial}, {0, d / 2, d / 2})));
    u.inner_bns.push_back(bn(name + ".bn_s", mid, true));
    u.convs.push_back(conv(name + ".conv_t", mid, out, win({t, 1, 1}, {s_temporal, 1, 1}, {t / 2, 0, 0})));
    u.bn = bn(name + ".bn_t", out, true);
    u.relu = relu;
    return u;
  }

  Unit plain(const std::string& name, std::size_t in, std::size_t out, std::size_t d,
             std::size_t stride, bool relu) {
    Unit u;
    u.convs.push_back(conv(name + ".conv", in, out, win({1, d, d}, {1, stride, stride}, {0, d / 2, d / 2})));
    u.bn = bn(name + ".bn", out, true);
    u.relu = relu;
    return u;
  }

 private:
  nn::ParameterStore<T>& store_;
  Rng rng_;
  bool init_;
};

template <typename T>
Backbone tiny_video(Builder<T>& b, const ModelConfig& cfg) {
  Backbone bb;
  bb.prefix = "video";
  std::size_t in = 3;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t w = cfg.widths[i];
    const std::size_t ts = (i == 1 || i == 2) ? 2 : 1;
    bb.plain.push_back(b.factorized("video.block" + std::to_string(i + 1), in, w, w, 3, 3, 2, ts, true));
    in = w;
  }
  bb.map_channels = in;
  bb.fc = b.linear("video.fc", in, cfg.backbone_out_dim, true);
  return bb;
}

template <typename T>
Backbone tiny_audio(Builder<T>& b, const ModelConfig& cfg) {
  Backbone bb;
  bb.prefix = "audio";
  std::size_t in = 1;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t w = cfg.widths[i];
    bb.plain.push_back(b.plain("audio.block" + std::to_string(i + 1), in, w, 3, 2, true));
    in = w;
  }
  bb.map_channels = in;
  bb.fc = b.linear("audio.fc", in, cfg.backbone_out_dim, true);
  return bb;
}

template <typename T>
Backbone r2plus1d_18(Builder<T>& b, const ModelConfig& cfg) {
  Backbone bb;
  bb.prefix = "video";
  bb.stem.push_back(b.factorized("video.stem", 3, factorized_mid(3, 7, 3, 64), 64, 7, 3, 2, 1, true));
  bb.stem_pool = win({1, 3, 3}, {1, 2, 2}, {0, 1, 1});
  std::size_t in = 64;
  const std::array<std::size_t, 4> widths{64, 128, 256, 512};
  for (std::size_t stage = 0; stage < 4; ++stage) {
    const std::size_t out = widths[stage];
    for (std::size_t j = 0; j < 2; ++j) {
      const std::size_t s = (stage > 0 && j == 0) ? 2 : 1;
      const std::string name = "video.block" + std::to_string(stage + 2) + "." + std::to_string(j + 1);
      Block blk;
      blk.a = b.factorized(name + ".1", in, factorized_mid(3, 3, in, out), out, 3, 3, s, s, true);
      blk.b = b.factorized(name + ".2", out, factorized_mid(3, 3, out, out), out, 3, 3, 1, 1, false);
      if (s != 1 || in != out) {
        Unit sc;
        sc.convs.push_back(b.conv(name + ".down", in, out, win({1, 1, 1}, {s, s, s}, {0, 0, 0})));
        sc.bn = b.bn(name + ".down_bn", out, true);
        sc.relu = false;
        blk.shortcut = std::move(sc);
      }
      bb.blocks.push_back(std::move(blk));
      in = out;
    }
  }
  bb.map_channels = in;
  if (in != cfg.backbone_out_dim) bb.fc = b.linear("video.fc", in, cfg.backbone_out_dim, true);
  return bb;
}

template <typename T>
Backbone resnet18_audio(Builder<T>& b, const ModelConfig& cfg) {
  Backbone bb;
  bb.prefix = "audio";
  bb.stem.push_back(b.plain("audio.stem", 1, 64, 7, 2, true));
  bb.stem_pool = win({1, 3, 3}, {1, 2, 2}, {0, 1, 1});
  std::size_t in = 64;
  const std::array<std::size_t, 4> widths{64, 128, 256, 512};
  for (std::size_t stage = 0; stage < 4; ++stage) {
    const std::size_t out = widths[stage];
    for (std::size_t j = 0; j < 2; ++j) {
      const std::size_t s = (stage > 0 && j == 0) ? 2 : 1;
      const std::string name = "audio.block" + std::to_string(stage + 2) + "." + std::to_string(j + 1);
      Block blk;
      blk.a = b.plain(name + ".1", in, out, 3, s, true);
      blk.b = b.plain(name + ".2", out, out, 3, 1, false);
      if (s != 1 || in != out) {
        Unit sc;
        sc.convs.push_back(b.conv(name + ".down", in, out, win({1, 1, 1}, {1, s, s}, {0, 0, 0})));
        sc.bn = b.bn(name + ".down_bn", out, true);
        sc.relu = false;
        blk.shortcut = std::move(sc);
      }
      bb.blocks.push_back(std::move(blk));
      in = out;
    }
  }
  bb.map_channels = in;
  if (in != cfg.backbone_out_dim) bb.fc = b.linear("audio.fc", in, cfg.backbone_out_dim, true);
  return bb;
}

template <typename T>
void build_heads(Builder<T>& b, const ModelConfig& cfg, const std::string& m) {
  const std::size_t p = cfg.projector_dim;
  b.group = ParamGroup::encoder;
  b.linear(m + ".proj.fc1", cfg.backbone_out_dim, p, false);
  b.bn(m + ".proj.bn1", p, true);
  if (cfg.projector_layers == 3) {
    b.linear(m + ".proj.fc2", p, p, false);
    b.bn(m + ".proj.bn2", p, true);
  }
  b.linear(m + ".proj.out", p, p, false);
  b.bn(m + ".proj.out_bn", p, false);
}

template <typename T>
void build_predictor(Builder<T>& b, const ModelConfig& cfg, const std::string& prefix) {
  b.group = ParamGroup::predictor;
  b.linear(prefix + ".pred.fc1", cfg.projector_dim, cfg.predictor_bottleneck, false);
  b.bn(prefix + ".pred.bn1", cfg.predictor_bottleneck, true);
  b.linear(prefix + ".pred.fc2", cfg.predictor_bottleneck, cfg.projector_dim, true);
  b.group = ParamGroup::encoder;
}

std::string predictor_prefix(const ModelConfig& cfg, Modality m) {
  if (cfg.predictor_mode == PredictorMode::common) return "shared";
  return std::string(to_string(m));
}

}  // namespace

template <typename T>
Network<T>::Network(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  build(seed, true);
}

template <typename T>
Network<T>::Network(const ModelConfig& cfg, nn::ParameterStore<T> store) : cfg_(cfg) {
  build(0, false);
  const auto& want = store_.entries();
  const auto& got = store.entries();
  if (want.size() != got.size()) {
    throw ConfigError("parameter store has " + std::to_string(got.size()) +
                      " arrays, model config expects " + std::to_string(want.size()));
  }
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i].var->name != got[i].var->name ||
        want[i].var->value.shape() != got[i].var->value.shape()) {
      throw ConfigError("parameter '" + got[i].var->name + "' " +
                        shape_string(got[i].var->value.shape()) + " does not match expected '" +
                        want[i].var->name + "' " + shape_string(want[i].var->value.shape()));
    }
  }
  for (const auto& name : store_.buffer_names()) {
    if (store.buffer(name).shape() != store_.buffer(name).shape()) {
      throw ConfigError("buffer '" + name + "' has the wrong shape");
    }
  }
  store_ = std::move(store);
}

template <typename T>
void Network<T>::build(std::uint64_t seed, bool initialize) {
  if (auto v = validate(cfg_); !v.empty()) throw ConfigError("invalid model config: " + v.front());
  Builder<T> b(store_, seed, initialize);
  b.tag = ModalityTag::video;
  backbones_.push_back(cfg_.preset == EncoderPreset::paper ? r2plus1d_18(b, cfg_) : tiny_video(b, cfg_));
  build_heads(b, cfg_, "video");
  b.tag = ModalityTag::audio;
  backbones_.push_back(cfg_.preset == EncoderPreset::paper ? resnet18_audio(b, cfg_) : tiny_audio(b, cfg_));
  build_heads(b, cfg_, "audio");
  if (cfg_.predictor_mode == PredictorMode::separate) {
    b.tag = ModalityTag::video;
    build_predictor(b, cfg_, "video");
    b.tag = ModalityTag::audio;
    build_predictor(b, cfg_, "audio");
  } else {
    b.tag = ModalityTag::shared;
    build_predictor(b, cfg_, "shared");
  }
}

template <typename T>
Var<T> Network<T>::batch_norm(const std::string& prefix, bool affine, const Var<T>& x, bool training) {
  Var<T> gamma, beta;
  if (affine) {
    gamma = store_.param(prefix + ".gamma");
    beta = store_.param(prefix + ".beta");
  }
  return nn::batch_norm(x, gamma, beta, store_.batch_norm_state(prefix), training);
}

template <typename T>
Var<T> Network<T>::run_unit(const Unit& u, Var<T> x, bool training) {
  for (std::size_t i = 0; i < u.convs.size(); ++i) {
    x = nn::conv3d(x, store_.param(u.convs[i].weight), u.convs[i].window);
    if (i < u.inner_bns.size()) x = nn::relu(batch_norm(u.inner_bns[i], true, x, training));
  }
  x = batch_norm(u.bn, store_.contains(u.bn + ".gamma"), x, training);
  return u.relu ? nn::relu(x) : x;
}

template <typename T>
Var<T> Network<T>::run_backbone(const Backbone& bb, Var<T> x, bool training) {
  for (const auto& u : bb.stem) x = run_unit(u, x, training);
  if (bb.stem_pool) x = nn::max_pool3d(x, *bb.stem_pool);
  for (const auto& blk : bb.blocks) {
    auto y = run_unit(blk.b, run_unit(blk.a, x, training), training);
    auto s = blk.shortcut ? run_unit(*blk.shortcut, x, training) : x;
    x = nn::relu(nn::add(y, s));
  }
  for (const auto& u : bb.plain) x = run_unit(u, x, training);
  return x;
}

template <typename T>
Var<T> Network<T>::embed(const Backbone& bb, const Var<T>& map) {
  auto pooled = nn::global_avg_pool(map);
  if (bb.fc.empty()) return pooled;
  return nn::linear(pooled, store_.param(bb.fc + ".weight"), store_.param(bb.fc + ".bias"));
}

template <typename T>
Var<T> Network<T>::video_feature_map(const Var<T>& frames, bool training) {
  const auto& s = frames->value.shape();
  if (s.size() != 5 || s[1] != 3) {
    throw ShapeError("video input must be [B, 3, T, H, W], got " + shape_string(s));
  }
  return run_backbone(backbones_[0], frames, training);
}

template <typename T>
Var<T> Network<T>::audio_feature_map(const Var<T>& spec, bool training) {
  const auto& s = spec->value.shape();
  Var<T> x = spec;
  if (s.size() == 4 && s[1] == 1) {
    x = nn::reshape(spec, {s[0], 1, 1, s[2], s[3]});
  } else if (!(s.size() == 5 && s[1] == 1 && s[2] == 1)) {
    throw ShapeError("audio input must be [B, 1, F, T], got " + shape_string(s));
  }
  return run_backbone(backbones_[1], x, training);
}

template <typename T>
Var<T> Network<T>::encode_video(const Var<T>& frames, bool training) {
  return embed(backbones_[0], video_feature_map(frames, training));
}

template <typename T>
Var<T> Network<T>::encode_audio(const Var<T>& spec, bool training) {
  return embed(backbones_[1], audio_feature_map(spec, training));
}

template <typename T>
Var<T> Network<T>::project(Modality m, const Var<T>& embedding, bool training) {
  const auto& s = embedding->value.shape();
  if (s.size() != 2 || s[1] != cfg_.backbone_out_dim) {
    throw ShapeError("projector input must be [B, " + std::to_string(cfg_.backbone_out_dim) + "], got " +
                     shape_string(s));
  }
  const std::string p = std::string(to_string(m)) + ".proj.";
  auto x = nn::linear(embedding, store_.param(p + "fc1.weight"), Var<T>());
  x = nn::relu(batch_norm(p + "bn1", true, x, training));
  if (cfg_.projector_layers == 3) {
    x = nn::linear(x, store_.param(p + "fc2.weight"), Var<T>());
    x = nn::relu(batch_norm(p + "bn2", true, x, training));
  }
  x = nn::linear(x, store_.param(p + "out.weight"), Var<T>());
  return batch_norm(p + "out_bn", false, x, training);
}

template <typename T>
Var<T> Network<T>::predict(Modality m, const Var<T>& z, bool training) {
  const auto& s = z->value.shape();
  if (s.size() != 2 || s[1] != cfg_.projector_dim) {
    throw ShapeError("predictor input must be [B, " + std::to_string(cfg_.projector_dim) + "], got " +
                     shape_string(s));
  }
  const std::string p = predictor_prefix(cfg_, m) + ".pred.";
  Var<T> x = cfg_.predictor_mode == PredictorMode::common ? nn::l2_normalize_rows(z) : z;
  x = nn::linear(x, store_.param(p + "fc1.weight"), Var<T>());
  x = nn::relu(batch_norm(p + "bn1", true, x, training));
  return nn::linear(x, store_.param(p + "fc2.weight"), store_.param(p + "fc2.bias"));
}

template <typename T>
BranchOutputs<T> Network<T>::forward_views(const Var<T>& v1, const Var<T>& v2, const Var<T>& a1,
                                           const Var<T>& a2, bool training) {
  BranchOutputs<T> out;
  if (v1 || v2) {
    if (!v1 || !v2) throw ShapeError("forward_views needs both video views or neither");
    out.zv1 = project(Modality::video, encode_video(v1, training), training);
    out.zv2 = project(Modality::video, encode_video(v2, training), training);
    out.pv1 = predict(Modality::video, out.zv1, training);
    out.pv2 = predict(Modality::video, out.zv2, training);
  }
  if (a1 || a2) {
    if (!a1 || !a2) throw ShapeError("forward_views needs both audio views or neither");
    out.za1 = project(Modality::audio, encode_audio(a1, training), training);
    out.za2 = project(Modality::audio, encode_audio(a2, training), training);
    out.pa1 = predict(Modality::audio, out.za1, training);
    out.pa2 = predict(Modality::audio, out.za2, training);
  }
  return out;
}

template class Network<float>;
template class Network<double>;

}  // namespace avssl::model
