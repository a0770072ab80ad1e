// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "avssl/core/error.hpp"
#include "avssl/data/manifest.hpp"
#include "avssl/data/media.hpp"
#include "avssl/data/run_config.hpp"
#include "avssl/trainer/checkpoint.hpp"
#include "avssl/trainer/optim.hpp"
#include "avssl/trainer/pretrain.hpp"
#include "doctest.h"
#include "json.hpp"
#include "support.hpp"

using namespace avssl;
namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  os << s;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

data::RunConfig micro_config() {
  auto c = data::preset("desk");
  c.model = model::ModelConfig::micro();
  c.seed = 5;
  return c;
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("wav round trip quantizes to 16 bits") {
    test::TempDir dir("wav");
    data::WaveformClip w;
    w.sample_rate_hz = 8000;
    for (int i = 0; i < 800; ++i) w.samples.push_back(static_cast<float>(0.9 * std::sin(i * 0.1)));
    data::write_wav(dir / "a.wav", w);
    const auto r = data::read_wav(dir / "a.wav");
    CHECK(r.sample_rate_hz == 8000);
    REQUIRE(r.samples.size() == 800);
    for (std::size_t i = 0; i < 800; ++i) CHECK(std::abs(r.samples[i] - w.samples[i]) <= 1.0 / 32767);
    CHECK_THROWS_AS(data::read_wav(dir / "missing.wav"), IoError);
  }

  TEST_CASE("avcx round trip and random access") {
    test::TempDir dir("avcx");
    data::FrameSequence f(5, 8, 10, 25.0);
    for (std::size_t i = 0; i < f.pixels.size(); ++i) f.pixels[i] = static_cast<float>(i % 256) / 255.0f;
    data::write_avcx(dir / "v.avcx", f);
    CHECK(data::read_avcx(dir / "v.avcx") == f);
    const auto h = data::read_avcx_header(dir / "v.avcx");
    CHECK(h.frames == 5);
    CHECK(h.fps == 25.0);
    const auto sub = data::AvcxReader(dir / "v.avcx").read({4, 1}, 12.5);
    CHECK(sub.frames == 2);
    CHECK(sub.at(0, 3, 2, 1) == f.at(4, 3, 2, 1));
    CHECK(sub.at(1, 0, 0, 0) == f.at(1, 0, 0, 0));
    write_file(dir / "bad.avcx", "XXXX");
    CHECK_THROWS_AS(data::read_avcx(dir / "bad.avcx"), IoError);
  }

  TEST_CASE("clip duration consistency") {
    data::WaveformClip w;
    w.samples.assign(16000, 0.0f);
    CHECK(data::AVClip::make(w, data::FrameSequence(16, 8, 8, 16.0)).duration_s == 1.0);
    CHECK_THROWS_AS(data::AVClip::make(w, data::FrameSequence(20, 8, 8, 16.0)), ShapeError);
  }

  TEST_CASE("manifest parsing errors") {
    test::TempDir dir("manifest");
    data::write_wav(dir / "a.wav", data::WaveformClip{std::vector<float>(100), 16000});
    data::write_avcx(dir / "a.avcx", data::FrameSequence(1, 8, 8, 16.0));
    const std::string good =
        R"({"clip_id":"c1","audio_path":"a.wav","video_path":"a.avcx","duration_s":4.0,"label":1,"split":"train"})";
    write_file(dir / "m.jsonl", good + "\n");
    const auto m = data::load_manifest(dir / "m.jsonl");
    REQUIRE(m.entries.size() == 1);
    CHECK(m.entries[0].label == 1);
    CHECK(m.resolve("a.wav") == dir / "a.wav");
    CHECK(data::load_manifest(dir / "m.jsonl").entries == m.entries);

    write_file(dir / "dup.jsonl", good + "\n" + good + "\n");
    try {
      data::load_manifest(dir / "dup.jsonl");
      FAIL("duplicate accepted");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("c1") != std::string::npos);
    }
    write_file(dir / "broken.jsonl", good + "\n{oops\n");
    try {
      data::load_manifest(dir / "broken.jsonl");
      FAIL("malformed line accepted");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("2") != std::string::npos);
    }
    write_file(dir / "gone.jsonl",
               R"({"clip_id":"c2","audio_path":"none.wav","video_path":"a.avcx","duration_s":4.0,"split":"test"})"
               "\n");
    CHECK_THROWS_AS(data::load_manifest(dir / "gone.jsonl"), IoError);
    write_file(dir / "empty.jsonl", "");
    CHECK(data::load_manifest(dir / "empty.jsonl").entries.empty());
    CHECK_THROWS_AS(data::load_manifest(dir / "nope.jsonl"), IoError);
  }

  TEST_CASE("run config presets") {
    const auto desk = data::preset("desk");
    CHECK(desk.optim.batch_size == 32);
    CHECK(desk.optim.epochs == 30);
    CHECK(desk.model.preset == model::EncoderPreset::tiny);
    const auto ks = data::preset("kinetics_sound");
    CHECK(ks.optim.batch_size == 512);
    CHECK(ks.optim.epoch_size == 220000);
    CHECK(ks.optim.epochs == 100);
    CHECK(ks.optim.lr_start == 2e-4);
    CHECK(ks.optim.lr_end == 0.0);
    CHECK(ks.optim.lr_start * ks.optim.predictor_lr_mult == doctest::Approx(2e-3));
    CHECK(ks.optim.weight_decay == 1e-4);
    CHECK(ks.optim.beta1 == 0.9);
    CHECK(ks.optim.beta2 == 0.999);
    CHECK(ks.model.preset == model::EncoderPreset::paper);
    CHECK_THROWS_AS(data::preset("imagenet"), ConfigError);
  }

  TEST_CASE("run config JSON round trip and strictness") {
    auto c = data::preset("desk");
    c.loss_mask = objective::LossMask::parse("sync,async");
    c.sampler.strategy = sampling::Strategy::far_apart;
    c.optim.epochs = 3;
    c.video_aug.cutout.num = 2;
    const auto text = data::to_json(c);
    const auto back = data::config_from_json(text);
    CHECK(data::to_json(back) == text);
    CHECK(back.loss_mask == c.loss_mask);
    CHECK_THROWS_AS(data::config_from_json(R"({"optim": {"epochz": 3}})"), ConfigError);
    CHECK_THROWS_AS(data::config_from_json("[1]"), ConfigError);
    const auto partial = data::config_from_json(R"({"preset": "kinetics_sound", "optim": {"epochs": 2}})");
    CHECK(partial.optim.epochs == 2);
    CHECK(partial.optim.batch_size == 512);
  }

  TEST_CASE("run config validation lists every violation") {
    auto c = data::preset("desk");
    CHECK(data::validate(c).empty());
    c.optim.batch_size = 1;
    c.loss_mask = objective::LossMask{};
    c.model.projector_layers = 5;
    const auto v = data::validate(c);
    CHECK(v.size() >= 3);
    CHECK_THROWS_AS(data::require_valid(c), ConfigError);
  }
}

TEST_SUITE("trainer") {
  TEST_CASE("cosine schedule") {
    CHECK(trainer::cosine_lr(0, 100, 2e-4, 0.0) == 2e-4);
    CHECK(trainer::cosine_lr(100, 100, 2e-4, 1e-4) == doctest::Approx(1e-4));
    CHECK(trainer::cosine_lr(50, 100, 2e-4, 0.0) == doctest::Approx(1e-4));
    CHECK(trainer::cosine_lr(25, 100, 1.0, 0.0) == doctest::Approx((1 + std::cos(std::numbers::pi / 4)) / 2));
    CHECK_THROWS_AS(trainer::cosine_lr(101, 100, 1.0, 0.0), RangeError);
    CHECK_THROWS_AS(trainer::cosine_lr(0, 0, 1.0, 0.0), RangeError);
    data::OptimConfig o;
    o.warmup_steps = 10;
    const auto plan = trainer::SchedulePlan::from(o, 110);
    CHECK(plan.encoder_lr(0) == doctest::Approx(o.lr_start * 0.1));
    CHECK(plan.encoder_lr(4) == doctest::Approx(o.lr_start * 0.5));
    CHECK(plan.encoder_lr(10) == doctest::Approx(o.lr_start));
    CHECK(plan.predictor(77) == doctest::Approx(o.lr_start * o.predictor_lr_mult));
  }

  TEST_CASE("adaptive moment step matches a scalar reference") {
    nn::ParameterStore<double> s;
    auto w = s.add("w", Tensor<double>({2}, {1.0, -2.0}), nn::ParamGroup::encoder, nn::ModalityTag::video);
    auto p = s.add("p", Tensor<double>({1}, {0.5}), nn::ParamGroup::predictor, nn::ModalityTag::video);
    s.add("idle", Tensor<double>({1}, {3.0}), nn::ParamGroup::encoder, nn::ModalityTag::audio);
    trainer::AdamHyper h;
    h.weight_decay = 0.1;
    auto st = trainer::OptimizerState<double>::zeros(s, h);
    const double grads[3][3] = {{0.5, -1.0, 2.0}, {0.25, 0.0, -1.0}, {-0.5, 3.0, 0.1}};
    double ref[3] = {1.0, -2.0, 0.5}, m[3] = {}, v[3] = {};
    for (int t = 1; t <= 3; ++t) {
      w->grad()[0] = grads[t - 1][0];
      w->grad()[1] = grads[t - 1][1];
      p->grad()[0] = grads[t - 1][2];
      trainer::optimizer_step(s, st, 1e-2, 1e-1);
      for (int i = 0; i < 3; ++i) {
        const double lr = i == 2 ? 1e-1 : 1e-2;
        const double g = grads[t - 1][i] + 0.1 * ref[i];
        m[i] = 0.9 * m[i] + 0.1 * g;
        v[i] = 0.999 * v[i] + 0.001 * g * g;
        const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
        ref[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
      }
      s.zero_grad();
    }
    CHECK(w->value[0] == doctest::Approx(ref[0]).epsilon(1e-6));
    CHECK(w->value[1] == doctest::Approx(ref[1]).epsilon(1e-6));
    CHECK(p->value[0] == doctest::Approx(ref[2]).epsilon(1e-6));
    CHECK(s.param("idle")->value[0] == 3.0);
    CHECK(st.step == 3);
  }

  TEST_CASE("non-finite gradients abort before any update") {
    nn::ParameterStore<float> s;
    auto a = s.add("a", Tensor<float>({1}, {1.0f}), nn::ParamGroup::encoder, nn::ModalityTag::video);
    auto b = s.add("b", Tensor<float>({1}, {1.0f}), nn::ParamGroup::encoder, nn::ModalityTag::video);
    auto st = trainer::OptimizerState<float>::zeros(s, {});
    a->grad()[0] = 1.0f;
    b->grad()[0] = std::nanf("");
    try {
      trainer::optimizer_step(s, st, 0.1, 0.1);
      FAIL("nan accepted");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("b") != std::string::npos);
    }
    CHECK(a->value[0] == 1.0f);
  }

  TEST_CASE("trust ratio") {
    CHECK(trainer::trust_ratio_scale(1.0, 0.0, 1e-3) == 1.0);
    CHECK(trainer::trust_ratio_scale(2.0, 1.0, 1e-3) == doctest::Approx(2e-3));
    CHECK(trainer::trust_ratio_scale(1e4, 1.0, 1e-3) == 1.0);
  }

  TEST_CASE("epoch plan and order") {
    auto c = data::preset("desk");
    auto p = trainer::EpochPlan::from(c, 640);
    CHECK(p.views == 640);
    CHECK(p.steps_per_epoch == 20);
    CHECK(p.total_steps == 600);
    c.optim.epoch_size = 100;
    p = trainer::EpochPlan::from(c, 640);
    CHECK(p.steps_per_epoch == 3);
    const auto order = trainer::epoch_order(1, 0, 10, 10);
    CHECK(std::set<std::size_t>(order.begin(), order.end()).size() == 10);
    const auto wrap = trainer::epoch_order(1, 0, 10, 25);
    CHECK(wrap.size() == 25);
    CHECK(trainer::epoch_order(1, 3, 10, 25) == trainer::epoch_order(1, 3, 10, 25));
    CHECK(trainer::epoch_order(1, 3, 10, 25) != trainer::epoch_order(1, 4, 10, 25));
  }

  TEST_CASE("metrics lines") {
    trainer::StepRecord r;
    r.step = 3;
    r.batch = 8;
    const auto j = nlohmann::json::parse(trainer::to_json_line(r));
    CHECK(j["kind"] == "step");
    CHECK(j["L_total"].is_null());
    CHECK(j["L_a1v2"].is_null());
    trainer::EpochRecord e;
    e.collapse_reference = 0.5;
    CHECK(nlohmann::json::parse(trainer::to_json_line(e))["collapse_reference"] == 0.5);
  }

  TEST_CASE("collapse monitor") {
    trainer::CollapseMonitor m;
    CHECK(m.value() == 0.0);
    // identical rows: zero spread
    m.add(Tensor<float>({3, 2}, {1, 1, 1, 1, 1, 1}));
    CHECK(m.value() < 1e-7);  // float rounding of the unit-normalized rows
    m.reset();
    // rows e1, -e1: per-dim std {1, 0} -> mean 0.5
    m.add(Tensor<float>({2, 2}, {2, 0, -3, 0}));
    CHECK(m.value() == doctest::Approx(0.5));
  }

  TEST_CASE("checkpoint round trip") {
    test::TempDir dir("ckpt");
    const auto cfg = micro_config();
    model::Network<float> net(cfg.model, 99);
    trainer::TrainState st;
    st.step = 7;
    Rng r(3);
    st.rng_state = r.state();
    st.optim = trainer::OptimizerState<float>::zeros(net.store(), trainer::AdamHyper::from(cfg.optim));
    st.optim.step = 7;
    st.optim.m[0][0] = 0.25f;
    st.epoch.loss_sum = -1.5;
    st.epoch.steps = 2;
    st.epoch.video.add(Tensor<float>({2, 2}, {1, 0, 0, 1}));
    trainer::save_checkpoint(dir / "c.avck", cfg, net, st);

    const auto ck = trainer::load_checkpoint(dir / "c.avck");
    CHECK(ck.state.step == 7);
    CHECK(ck.state.rng_state == st.rng_state);
    CHECK(ck.state.optim.m[0][0] == 0.25f);
    CHECK(ck.state.epoch.loss_sum == -1.5);
    CHECK(ck.state.epoch.video.value() == doctest::Approx(st.epoch.video.value()));
    CHECK(ck.config_hash == trainer::config_hash(cfg));
    for (std::size_t i = 0; i < net.store().entries().size(); ++i) {
      CHECK(ck.network->store().entries()[i].var->value == net.store().entries()[i].var->value);
    }
    for (const auto& b : net.store().buffer_names()) CHECK(ck.network->store().buffer(b) == net.store().buffer(b));
    const auto meta = nlohmann::json::parse(trainer::describe_checkpoint(dir / "c.avck"));
    CHECK(meta["parameter_count"] == net.store().parameter_count());
    CHECK(meta["step"] == 7);

    auto bytes = read_file(dir / "c.avck");
    write_file(dir / "trunc.avck", bytes.substr(0, bytes.size() - 10));
    CHECK_THROWS_AS(trainer::load_checkpoint(dir / "trunc.avck"), IoError);
    bytes[0] = 'X';
    write_file(dir / "magic.avck", bytes);
    try {
      trainer::load_checkpoint(dir / "magic.avck");
      FAIL("bad magic accepted");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
    }
    CHECK_THROWS_AS(trainer::load_checkpoint(dir / "none.avck"), IoError);
  }
}
