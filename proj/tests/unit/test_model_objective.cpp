// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include "avssl/core/error.hpp"
#include "avssl/model/model.hpp"
#include "avssl/objective/objective.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace avssl;
using model::Modality;
using objective::Aggregate;
using objective::LossMask;
using objective::Pair;

namespace {

std::size_t head_params(std::size_t in, std::size_t proj, std::size_t bottleneck) {
  // projector: linear (no bias) + BN affine, twice, then linear (no bias)
  const std::size_t projector = in * proj + 2 * proj + proj * proj + 2 * proj + proj * proj;
  // predictor: linear (no bias) + BN affine, then linear with bias
  const std::size_t predictor = proj * bottleneck + 2 * bottleneck + bottleneck * proj + proj;
  return projector + predictor;
}

model::BranchOutputs<double> random_outputs(Rng& r, std::size_t b, std::size_t d) {
  model::BranchOutputs<double> o;
  for (auto* v : {&o.zv1, &o.zv2, &o.za1, &o.za2, &o.pv1, &o.pv2, &o.pa1, &o.pa2}) {
    *v = nn::make_leaf(test::random_tensor({b, d}, r), true);
  }
  return o;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("tiny preset parameter count") {
    model::ModelConfig cfg;
    model::Network<float> net(cfg, 0);
    const std::size_t heads = 2 * head_params(512, 2048, 512);
    CHECK(heads == 23091200);
    // conv stacks and their 512-d maps, frozen from the layer table
    const std::size_t backbones = 392928;
    CHECK(net.store().parameter_count() == heads + backbones);
    CHECK(net.store().parameter_count() == 23484128);
    CHECK(backbones < 5000000);
  }

  TEST_CASE("micro preset parameter count") {
    model::Network<double> net(model::ModelConfig::micro(), 0);
    CHECK(net.store().parameter_count() == 1380);
  }

  TEST_CASE("encoder output shapes") {
    model::Network<float> net(model::ModelConfig{}, 1);
    auto v = nn::constant(Tensor<float>({2, 3, 8, 112, 112}, 0.5f));
    auto a = nn::constant(Tensor<float>({2, 1, 80, 200}, 0.5f));
    CHECK(net.video_feature_map(v, false)->value.shape() == Shape{2, 128, 2, 7, 7});
    CHECK(net.audio_feature_map(a, false)->value.shape() == Shape{2, 128, 1, 5, 13});
    auto ev = net.encode_video(v, false);
    CHECK(ev->value.shape() == Shape{2, 512});
    auto z = net.project(Modality::audio, net.encode_audio(a, false), false);
    CHECK(z->value.shape() == Shape{2, 2048});
    CHECK(net.predict(Modality::audio, z, false)->value.shape() == Shape{2, 2048});
  }

  TEST_CASE("init is deterministic in the seed") {
    model::Network<float> a(model::ModelConfig::micro(), 3), b(model::ModelConfig::micro(), 3),
        c(model::ModelConfig::micro(), 4);
    bool same = true, differ = false;
    for (std::size_t i = 0; i < a.store().entries().size(); ++i) {
      same = same && a.store().entries()[i].var->value == b.store().entries()[i].var->value;
      differ = differ || a.store().entries()[i].var->value != c.store().entries()[i].var->value;
    }
    CHECK(same);
    CHECK(differ);
  }

  TEST_CASE("parameter groups and tags") {
    model::Network<float> net(model::ModelConfig::micro(), 0);
    for (const auto& e : net.store().entries()) {
      const bool pred = e.var->name.find(".pred.") != std::string::npos;
      CHECK((e.group == nn::ParamGroup::predictor) == pred);
    }
    auto cfg = model::ModelConfig::micro();
    cfg.predictor_mode = model::PredictorMode::common;
    model::Network<float> common(cfg, 0);
    CHECK(common.store().parameter_count(nn::ModalityTag::shared) > 0);
    CHECK(common.store().parameter_count() < net.store().parameter_count());
  }

  TEST_CASE("config validation") {
    model::ModelConfig cfg;
    CHECK(model::validate(cfg).empty());
    cfg.projector_layers = 4;
    CHECK_FALSE(model::validate(cfg).empty());
    CHECK_THROWS_AS(model::Network<float>(cfg, 0), ConfigError);
    CHECK_THROWS_AS(model::parse_encoder_preset("resnet"), ConfigError);
  }

  TEST_CASE("projection depth 2 drops one hidden layer") {
    auto cfg = model::ModelConfig::micro();
    model::Network<float> three(cfg, 0);
    cfg.projector_layers = 2;
    model::Network<float> two(cfg, 0);
    // one linear (8 x 8, no bias) and one BN (2 x 8) fewer per modality
    CHECK(three.store().parameter_count() - two.store().parameter_count() == 2 * (64 + 16));
  }

  TEST_CASE("reference feature pools") {
    const auto v = model::feature_pool_spec(model::EncoderPreset::paper, Modality::video);
    CHECK(v.window.kernel == std::array<std::size_t, 3>{1, 4, 4});
    const auto a = model::feature_pool_spec(model::EncoderPreset::paper, Modality::audio);
    CHECK(a.window.kernel == std::array<std::size_t, 3>{1, 1, 3});
    CHECK(a.window.stride == std::array<std::size_t, 3>{1, 1, 2});
  }
}

TEST_SUITE("objective") {
  TEST_CASE("negative cosine closed forms") {
    const std::vector<double> x{1, 0}, y{0, 1}, mx{-2, 0}, s{3, 0};
    CHECK(objective::neg_cosine(x, y) == 0.0);
    CHECK(objective::neg_cosine(x, s) == -1.0);
    CHECK(objective::neg_cosine(x, mx) == 1.0);
    const std::vector<double> p{1, 1}, z{1, 0};
    CHECK(objective::neg_cosine(p, z) == doctest::Approx(-1.0 / std::sqrt(2.0)).epsilon(1e-15));
    CHECK_THROWS_AS(objective::neg_cosine(x, std::vector<double>{0, 0}), NumericError);
    CHECK(objective::symmetrized_pair_loss(x, x, y, y) == doctest::Approx(0.0));
    CHECK(objective::symmetrized_pair_loss(x, y, y, x) == doctest::Approx(-1.0));
    CHECK(objective::symmetrized_pair_loss(x, y, x, y) == doctest::Approx(0.0));
  }

  TEST_CASE("loss mask parsing") {
    CHECK(LossMask::parse("full") == LossMask::full());
    CHECK(LossMask::parse("intra,sync,async") == LossMask::full());
    CHECK(LossMask::parse("sync+intra").count() == 2);
    CHECK(LossMask::parse("video,full").count() == 4);
    CHECK(LossMask::parse("").empty());
    CHECK_THROWS_AS(LossMask::parse("cross"), ConfigError);
    CHECK(LossMask::parse(LossMask::full().to_string()) == LossMask::full());
  }

  TEST_CASE("masked aggregates compute only their terms") {
    Rng r(9);
    const auto out = random_outputs(r, 3, 5);
    SUBCASE("sync") {
      const auto b = objective::crisscross_loss(out, LossMask::parse("sync")).breakdown();
      CHECK(b[Pair::a1v1].has_value());
      CHECK(b[Pair::a2v2].has_value());
      for (auto p : {Pair::v1v2, Pair::a1a2, Pair::a1v2, Pair::a2v1}) CHECK_FALSE(b[p].has_value());
      CHECK(b.total == doctest::Approx((*b[Pair::a1v1] + *b[Pair::a2v2]) / 2).epsilon(1e-14));
      CHECK_FALSE(b.intra.has_value());
    }
    SUBCASE("video only") {
      const auto b = objective::crisscross_loss(out, LossMask{}.with(Aggregate::video)).breakdown();
      CHECK(b.total == *b[Pair::v1v2]);
      CHECK_FALSE(b[Pair::a1a2].has_value());
    }
    SUBCASE("async + intra") {
      const auto b = objective::crisscross_loss(out, LossMask::parse("async,intra")).breakdown();
      CHECK(b.total == doctest::Approx((*b.intra + *b.async) / 2).epsilon(1e-14));
      CHECK_FALSE(b.sync.has_value());
    }
  }

  TEST_CASE("missing modality and empty mask") {
    Rng r(1);
    auto out = random_outputs(r, 2, 4);
    CHECK_THROWS_AS(objective::crisscross_loss(out, LossMask{}), ConfigError);
    out.za1 = out.za2 = out.pa1 = out.pa2 = nullptr;
    CHECK_THROWS_AS(objective::crisscross_loss(out, LossMask::full()), ShapeError);
    CHECK_NOTHROW(objective::crisscross_loss(out, LossMask{}.with(Aggregate::video)));
  }

  TEST_CASE("graph loss equals the scalar reference") {
    Rng r(13);
    const auto out = random_outputs(r, 4, 6);
    const auto b = objective::crisscross_loss(out, LossMask::full()).breakdown();
    auto row = [](const nn::Var<double>& v, std::size_t i) {
      const auto d = v->value.dim(1);
      return std::vector<double>(v->value.data() + i * d, v->value.data() + (i + 1) * d);
    };
    double ref = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      ref += objective::symmetrized_pair_loss(row(out.pa1, i), row(out.za1, i), row(out.pv2, i), row(out.zv2, i));
    }
    CHECK(*b[Pair::a1v2] == doctest::Approx(ref / 4).epsilon(1e-13));
  }

  TEST_CASE("predictor gradient flows only through p") {
    Rng r(21);
    const auto out = random_outputs(r, 2, 4);
    nn::backward(objective::crisscross_loss(out, LossMask::full()).total);
    for (const auto* z : {&out.zv1, &out.zv2, &out.za1, &out.za2}) CHECK_FALSE((*z)->has_grad());
    for (const auto* p : {&out.pv1, &out.pv2, &out.pa1, &out.pa2}) CHECK((*p)->has_grad());
  }
}
