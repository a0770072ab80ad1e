// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <set>

#include "avssl/core/error.hpp"
#include "avssl/eval/evaluation.hpp"
#include "avssl/synth/synthdata.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace avssl;

namespace {

/// |sum x[n] e^{-i 2 pi f n / sr}| by the Goertzel recurrence.
double dft_magnitude(const std::vector<float>& x, double f, double sr) {
  const double w = 2.0 * std::numbers::pi * f / sr, c = 2.0 * std::cos(w);
  double s1 = 0.0, s2 = 0.0;
  for (float v : x) {
    const double s0 = v + c * s1 - s2;
    s2 = s1;
    s1 = s0;
  }
  return std::sqrt(s1 * s1 + s2 * s2 - c * s1 * s2);
}

/// Local maxima above 20% of the strongest component, on a 0.25 Hz grid
/// around every candidate carrier.
std::set<double> peak_set(const data::WaveformClip& w) {
  std::map<double, double> mag;
  for (double base : synth::kCarrierBaseHz) {
    for (double carrier : {base, base * synth::kCarrierRatio}) {
      for (int i = -24; i <= 24; ++i) {
        const double f = carrier + 0.25 * i;
        if (!mag.count(f)) mag[f] = dft_magnitude(w.samples, f, w.sample_rate_hz);
      }
    }
  }
  double top = 0;
  for (const auto& [f, m] : mag) top = std::max(top, m);
  std::set<double> peaks;
  for (auto it = std::next(mag.begin()); std::next(it) != mag.end(); ++it) {
    const auto prev = std::prev(it), next = std::next(it);
    if (it->second >= 0.2 * top && it->second > prev->second && it->second > next->second) peaks.insert(it->first);
  }
  return peaks;
}

synth::SynthSpec small_spec() {
  synth::SynthSpec s;
  s.frame_size = 32;
  return s;
}

eval::FeatureMatrix blobs(std::size_t classes, std::size_t per_class, std::size_t clips, std::size_t dim,
                          double spread, Rng& r, const std::string& prefix) {
  eval::FeatureMatrix m;
  m.dim = dim;
  for (std::size_t k = 0; k < classes; ++k) {
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t c = 0; c < clips; ++c) {
        std::vector<float> row(dim);
        for (std::size_t d = 0; d < dim; ++d) {
          row[d] = static_cast<float>((d % classes == k ? 3.0 : 0.0) + spread * r.normal());
        }
        m.append(row.data(), prefix + std::to_string(k) + "_" + std::to_string(i), c, static_cast<int>(k));
      }
    }
  }
  return m;
}

}  // namespace

TEST_SUITE("synthdata") {
  TEST_CASE("same category and instance render identically") {
    const auto s = small_spec();
    const auto a = synth::render_clip(s, 3, 7), b = synth::render_clip(s, 3, 7);
    CHECK(a.waveform == b.waveform);
    CHECK(a.video == b.video);
    CHECK(a.label == 3);
    CHECK_FALSE(synth::render_clip(s, 3, 8).waveform == a.waveform);
    CHECK_THROWS_AS(synth::render_clip(s, 8, 0), RangeError);
  }

  TEST_CASE("categories have distinct spectral peak sets") {
    auto s = small_spec();
    s.audio_snr_db = std::numeric_limits<double>::infinity();
    std::vector<std::set<double>> sets;
    for (std::size_t k = 0; k < s.num_categories; ++k) {
      const auto p = synth::clip_params(s, k, 0);
      const auto peaks = peak_set(synth::render_clip(s, k, 0).waveform);
      std::set<double> expect;
      for (double c : p.carriers_hz)
        for (double d : {-p.rate_hz, 0.0, p.rate_hz}) expect.insert(c + d);
      CHECK(peaks == expect);
      sets.push_back(peaks);
    }
    for (std::size_t i = 0; i < sets.size(); ++i)
      for (std::size_t j = i + 1; j < sets.size(); ++j) CHECK(sets[i] != sets[j]);
  }

  TEST_CASE("noise-free video matches the analytic disk trajectory") {
    auto s = small_spec();
    s.video_noise_sigma = 0.0;
    const auto p = synth::clip_params(s, 0, 2);
    REQUIRE(p.shape == synth::Shape::disk);
    const auto clip = synth::render_clip(s, 0, 2);
    std::size_t inside = 0;
    for (std::size_t t = 0; t < clip.video.frames; ++t) {
      const double time = static_cast<double>(t) / s.fps;
      const double cx = 0.5 * s.frame_size + 0.25 * s.frame_size * std::sin(2 * std::numbers::pi * p.rate_hz * time + p.phase);
      CHECK(synth::shape_center(p, time)[0] == doctest::Approx(cx));
      for (std::size_t y = 0; y < s.frame_size; ++y) {
        for (std::size_t x = 0; x < s.frame_size; ++x) {
          const double dx = x + 0.5 - cx, dy = y + 0.5 - p.center_y;
          const bool in = dx * dx + dy * dy <= p.radius_px * p.radius_px;
          inside += in;
          for (std::size_t c = 0; c < 3; ++c) {
            CHECK(clip.video.at(t, y, x, c) == (in ? p.color[c] : p.background));
          }
        }
      }
    }
    CHECK(inside > 0);
  }

  TEST_CASE("category factorization") {
    const auto s = small_spec();
    CHECK(synth::appearance_groups(s) == 4);
    const auto a = synth::clip_params(s, 1, 0), b = synth::clip_params(s, 5, 0);
    CHECK(a.shape == b.shape);
    CHECK(a.carriers_hz == b.carriers_hz);
    CHECK(a.rate_hz != b.rate_hz);
    CHECK(synth::label_names(s).at(5) == "square_2.5hz");
  }

  TEST_CASE("spec validation and JSON") {
    auto s = small_spec();
    s.num_categories = 1;
    CHECK_FALSE(synth::validate(s).empty());
    s = small_spec();
    s.duration_s = 3.0;
    CHECK_FALSE(synth::validate(s).empty());
    s = small_spec();
    CHECK(synth::spec_from_json(synth::to_json(s)) == s);
    CHECK_THROWS_AS(synth::spec_from_json(R"({"num_categoriez": 3})"), ConfigError);
    CHECK_THROWS_AS(synth::spec_from_json(R"({"num_categories": -3})"), ConfigError);
  }

  TEST_CASE("dataset split arithmetic and determinism") {
    test::TempDir dir("synth");
    auto s = small_spec();
    s.fps = 4.0;
    s.frame_size = 32;
    const auto m = synth::generate_dataset(s, dir.path());
    CHECK(m.entries.size() == 800);
    CHECK(m.split(data::Split::train).size() == 640);
    CHECK(m.split(data::Split::test).size() == 160);
    std::map<int, int> per_label_test;
    for (const auto* e : m.split(data::Split::test)) per_label_test[*e->label]++;
    for (const auto& [k, n] : per_label_test) CHECK(n == 20);
    CHECK(per_label_test.size() == 8);
    const auto loaded = data::load_manifest(dir / synth::kManifestFile);
    CHECK(loaded.entries == m.entries);
    CHECK(loaded.label_names == synth::label_names(s));

    s.num_categories = 2;
    s.clips_per_category = 5;
    test::TempDir a("synth_a"), b("synth_b");
    synth::generate_dataset(s, a.path());
    synth::generate_dataset(s, b.path());
    auto read = [](const std::filesystem::path& p) {
      std::ifstream is(p, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(is), {});
    };
    CHECK(read(a / synth::kManifestFile) == read(b / synth::kManifestFile));
    CHECK(read(a / "media/k1_0003.wav") == read(b / "media/k1_0003.wav"));
  }
}

TEST_SUITE("evaluation") {
  TEST_CASE("protocol tables") {
    CHECK(eval::clips_per_sample(eval::Protocol::video_train) == 25);
    CHECK(eval::clips_per_sample(eval::Protocol::video_test) == 10);
    CHECK(eval::clips_per_sample(eval::Protocol::audio_train) == 10);
    CHECK(eval::clips_per_sample(eval::Protocol::audio_test_2s) == 10);
    CHECK(eval::clips_per_sample(eval::Protocol::audio_test_5s) == 1);
    CHECK(eval::default_costs().size() == 8);
    CHECK(eval::default_costs().front() == 1e-5);
    CHECK(eval::default_costs().back() == 1.0);
    CHECK(eval::default_ks() == std::vector<std::size_t>{1, 5, 20});
    for (auto p : {eval::Protocol::video_train, eval::Protocol::audio_test_5s}) {
      CHECK(eval::parse_protocol(eval::to_string(p)) == p);
    }
    CHECK_THROWS_AS(eval::parse_protocol("video_val"), ConfigError);
  }

  TEST_CASE("protocol windows") {
    const auto cfg = data::preset("desk");
    Rng r(1);
    const auto w = eval::protocol_windows(eval::Protocol::video_test, 4.0, cfg, r);
    REQUIRE(w.size() == 10);
    CHECK(w.front().start_s == 0.0);
    CHECK(w.back().end_s() == doctest::Approx(4.0));
    CHECK(w[1].start_s - w[0].start_s == doctest::Approx(3.5 / 9));
    const auto tr = eval::protocol_windows(eval::Protocol::audio_train, 4.0, cfg, r);
    for (const auto& x : tr) {
      CHECK(x.start_s >= 0.0);
      CHECK(x.end_s() <= 4.0 + 1e-12);
      CHECK(x.duration_s == 2.0);
    }
    const auto five = eval::protocol_windows(eval::Protocol::audio_test_5s, 9.0, cfg, r);
    REQUIRE(five.size() == 1);
    CHECK(five[0].start_s == 2.0);
    CHECK_THROWS_AS(eval::protocol_windows(eval::Protocol::audio_test_5s, 4.0, cfg, r), RangeError);
  }

  TEST_CASE("pooling") {
    Tensor<float> map({2, 1, 4, 4});
    for (std::size_t i = 0; i < map.size(); ++i) map[i] = static_cast<float>(i);
    model::PoolSpec spec{nn::Window3{{1, 2, 2}, {1, 2, 2}, {0, 0, 0}}};
    const auto v = eval::pool_features(map, spec);
    CHECK(v == std::vector<float>{5, 7, 13, 15, 21, 23, 29, 31});
    model::PoolSpec big{nn::Window3{{1, 5, 5}, {1, 1, 1}, {0, 0, 0}}};
    CHECK_THROWS_AS(eval::pool_features(map, big), ShapeError);
  }

  TEST_CASE("separable fixture probes perfectly") {
    Rng r(2);
    const auto train = blobs(4, 10, 3, 8, 0.3, r, "tr");
    const auto test = blobs(4, 5, 2, 8, 0.3, r, "te");
    const auto rep = eval::svm_probe(train, test, eval::default_costs());
    CHECK(rep.costs.size() == 8);
    CHECK(rep.accuracies.size() == 8);
    CHECK(rep.best_accuracy == 1.0);
    CHECK(rep.test_samples == 20);
    CHECK(rep.num_classes == 4);
    CHECK(eval::eval_report_from_json(eval::to_json(rep)) == rep);
  }

  TEST_CASE("probe errors") {
    Rng r(3);
    const auto one = blobs(1, 4, 1, 4, 0.1, r, "a");
    CHECK_THROWS_AS(eval::svm_probe(one, one, eval::default_costs()), ConfigError);
    const auto two = blobs(2, 4, 1, 4, 0.1, r, "b");
    const auto wide = blobs(2, 4, 1, 6, 0.1, r, "c");
    CHECK_THROWS_AS(eval::svm_probe(two, wide, eval::default_costs()), ShapeError);
  }

  TEST_CASE("retrieval agrees with the brute-force ranking") {
    Rng r(4);
    const auto gallery = blobs(5, 20, 2, 6, 2.0, r, "g");
    const auto queries = blobs(5, 8, 3, 6, 2.0, r, "q");
    const std::vector<std::size_t> ks{1, 5, 20};
    const auto fast = eval::retrieval(queries, gallery, ks);
    CHECK(fast == eval::retrieval_bruteforce(queries, gallery, ks));
    CHECK(fast.recall[0] <= fast.recall[1]);
    CHECK(fast.recall[1] <= fast.recall[2]);
    CHECK(fast.query_ids.size() == 40);
    CHECK(eval::retrieval_report_from_json(eval::to_json(fast)) == fast);
  }

  TEST_CASE("self retrieval") {
    Rng r(5);
    const auto m = blobs(3, 10, 1, 5, 1.0, r, "s");
    CHECK(eval::retrieval(m, m, {1}).recall[0] == 1.0);
  }

  TEST_CASE("ties resolve to the lower row") {
    eval::FeatureMatrix g, q;
    g.dim = q.dim = 2;
    const float a[2] = {1, 0}, b[2] = {2, 0};
    g.append(a, "g0", 0, 0);
    g.append(b, "g1", 0, 1);
    q.append(a, "q", 0, 1);
    const auto rep = eval::retrieval(q, g, {1, 2});
    CHECK(rep.neighbors[0][0].row == 0);
    CHECK(rep.recall == std::vector<double>{0.0, 1.0});
  }

  TEST_CASE("feature file round trip") {
    test::TempDir dir("feat");
    Rng r(6);
    auto m = blobs(2, 3, 2, 4, 1.0, r, "f");
    m.protocol = "video_test";
    m.pool = "max(1,4,4)";
    eval::save_features(dir / "x.avfm", m);
    CHECK(eval::load_features(dir / "x.avfm") == m);
    CHECK_THROWS_AS(eval::load_features(dir / "nope.avfm"), IoError);
  }
}
