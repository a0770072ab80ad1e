// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "avssl/nn/autograd.hpp"
#include "avssl/nn/ops.hpp"
#include "avssl/nn/parameter_store.hpp"

namespace avssl::model {

using nn::Var;

enum class Modality { video, audio };

/// Backbone family.
///  - tiny:  executable default; small plain conv stacks, minute-scale training.
///  - paper: R(2+1)D-18 video and ResNet-18 audio reference backbones.
///  - micro: tiny topology with shrunken widths and head dimensions, for
///           exhaustive finite-difference checks only.
enum class EncoderPreset { tiny, paper, micro };

enum class PredictorMode { separate, common };

std::string_view to_string(EncoderPreset p);
std::string_view to_string(PredictorMode m);
std::string_view to_string(Modality m);
EncoderPreset parse_encoder_preset(std::string_view s);
PredictorMode parse_predictor_mode(std::string_view s);

struct ModelConfig {
  EncoderPreset preset = EncoderPreset::tiny;
  int projector_layers = 3;
  PredictorMode predictor_mode = PredictorMode::separate;
  std::size_t backbone_out_dim = 512;
  std::size_t projector_dim = 2048;
  std::size_t predictor_bottleneck = 512;
  /// Channel widths of the four tiny/micro backbone stages.
  std::array<std::size_t, 4> widths{16, 32, 64, 128};

  static ModelConfig micro();
  bool operator==(const ModelConfig&) const = default;
};

/// Returns human-readable violations; empty when valid.
std::vector<std::string> validate(const ModelConfig& cfg);

/// Max-pool applied to the final convolutional map for frozen-feature
/// extraction, followed by flattening.
struct PoolSpec {
  nn::Window3 window;
  std::string describe() const;
};

/// Reference pool for each preset/modality: (1,4,4) video; (1,3) stride
/// (1,2) audio.
PoolSpec feature_pool_spec(EncoderPreset preset, Modality m);

namespace detail {

struct ConvLayer {
  std::string weight;
  nn::Window3 window;
};

/// One convolution (or a factorized spatial->temporal pair with an inner
/// batch-norm + ReLU) followed by batch-norm and an optional ReLU.
struct Unit {
  std::vector<ConvLayer> convs;
  std::vector<std::string> inner_bns;
  std::string bn;
  bool relu = true;
};

/// Residual basic block: relu(b(a(x)) + shortcut(x)).
struct Block {
  Unit a;
  Unit b;
  std::optional<Unit> shortcut;
};

struct Backbone {
  std::string prefix;
  std::vector<Unit> stem;
  std::optional<nn::Window3> stem_pool;
  std::vector<Block> blocks;
  std::vector<Unit> plain;
  /// Linear map from the pooled width to backbone_out_dim; empty when the
  /// pooled width already equals it.
  std::string fc;
  std::size_t map_channels = 0;
};

}  // namespace detail

/// The eight head outputs of one forward pass over two views per modality.
/// Members are null for a modality that was not forwarded.
template <typename T>
struct BranchOutputs {
  Var<T> zv1, zv2, za1, za2;
  Var<T> pv1, pv2, pa1, pa2;

  bool has_video() const { return static_cast<bool>(zv1); }
  bool has_audio() const { return static_cast<bool>(za1); }
};

/// f_v, f_a (backbone + projector) and h_v, h_a (predictors) over one
/// ParameterStore.
template <typename T>
class Network {
 public:
  /// Registers every parameter and initializes deterministically from seed:
  /// fan-in scaled weights, batch-norm scale 1 and shift 0.
  Network(const ModelConfig& cfg, std::uint64_t seed);

  /// Adopts an existing store (e.g. a checkpoint); names and shapes must
  /// match what cfg builds.
  Network(const ModelConfig& cfg, nn::ParameterStore<T> store);

  const ModelConfig& config() const { return cfg_; }
  nn::ParameterStore<T>& store() { return store_; }
  const nn::ParameterStore<T>& store() const { return store_; }

  /// frames: [B, 3, T, H, W] -> final convolutional map.
  Var<T> video_feature_map(const Var<T>& frames, bool training);
  /// spectrograms: [B, 1, F, T] or [B, 1, 1, F, T] -> final convolutional map.
  Var<T> audio_feature_map(const Var<T>& spec, bool training);

  /// Backbone embeddings, [B, backbone_out_dim].
  Var<T> encode_video(const Var<T>& frames, bool training);
  Var<T> encode_audio(const Var<T>& spec, bool training);

  /// Projection MLP: [B, backbone_out_dim] -> [B, projector_dim].
  Var<T> project(Modality m, const Var<T>& embedding, bool training);
  /// Predictor MLP: [B, projector_dim] -> [B, projector_dim]. In common mode
  /// rows are length-normalized first and one head serves both modalities.
  Var<T> predict(Modality m, const Var<T>& z, bool training);

  /// zv_i = f_v(v_i), pv_i = h_v(zv_i); same for audio. Either modality may
  /// be skipped by passing null inputs.
  BranchOutputs<T> forward_views(const Var<T>& v1, const Var<T>& v2, const Var<T>& a1,
                                 const Var<T>& a2, bool training);

  /// The layer descriptions built from the config, video then audio.
  const std::vector<detail::Backbone>& backbones() const { return backbones_; }

 private:
  void build(std::uint64_t seed, bool initialize);
  Var<T> run_backbone(const detail::Backbone& bb, Var<T> x, bool training);
  Var<T> run_unit(const detail::Unit& u, Var<T> x, bool training);
  Var<T> batch_norm(const std::string& prefix, bool affine, const Var<T>& x, bool training);
  Var<T> embed(const detail::Backbone& bb, const Var<T>& map);

  ModelConfig cfg_;
  nn::ParameterStore<T> store_;
  std::vector<detail::Backbone> backbones_;  // [video, audio]
};

/// Convenience form of the model module's init_params operation.
template <typename T>
nn::ParameterStore<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  return std::move(Network<T>(cfg, seed).store());
}

extern template class Network<float>;
extern template class Network<double>;

}  // namespace avssl::model
