// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "avssl/data/manifest.hpp"
#include "avssl/data/run_config.hpp"
#include "avssl/model/model.hpp"

namespace avssl::eval {

enum class Protocol { video_train, video_test, audio_train, audio_test_2s, audio_test_5s };

std::string_view to_string(Protocol p);
Protocol parse_protocol(std::string_view s);
model::Modality modality(Protocol p);
/// 25, 10, 10, 10, 1.
std::size_t clips_per_sample(Protocol p);
/// Train protocols apply eval-feature augmentations; test protocols none.
bool augmented(Protocol p);
data::Split default_split(Protocol p);
/// Protocol pair used by the probe for a modality: (train, test).
std::pair<Protocol, Protocol> probe_protocols(model::Modality m);

/// N x D rows with their source sample, clip index within the sample and label.
struct FeatureMatrix {
  std::size_t dim = 0;
  std::vector<float> values;  // row-major N x D
  std::vector<std::string> sample_ids;
  std::vector<std::size_t> clip_index;
  std::vector<int> labels;
  std::string protocol;
  std::string pool;

  std::size_t rows() const { return sample_ids.size(); }
  const float* row(std::size_t i) const { return values.data() + i * dim; }
  void append(const float* row, std::string sample_id, std::size_t clip, int label);
  /// Throws ShapeError when the arrays disagree.
  void check() const;
  bool operator==(const FeatureMatrix&) const = default;
};

/// Max-pools one [C, T, H, W] map with the window, then flattens.
/// Throws ShapeError when the kernel exceeds the map.
std::vector<float> pool_features(const Tensor<float>& map, const model::PoolSpec& spec);

/// Time windows for one sample under a protocol. Train protocols draw start
/// times from rng; test protocols are equally spaced (audio_test_5s is one
/// centered 5 s window). Throws RangeError when the clip is too short.
std::vector<data::TimeWindow> protocol_windows(Protocol p, double clip_duration_s, const data::RunConfig& cfg,
                                               Rng& rng);

struct ExtractOptions {
  std::uint64_t seed = 0;
  std::size_t batch_size = 32;
  /// Split to read; defaults to the protocol's own split.
  std::optional<data::Split> split;
};

/// Frozen features: final convolutional map -> pool_features -> flatten,
/// network in inference mode. For audio_test_5s the map's time axis is
/// first max-reduced to the width of a 2 s map so rows match the 2 s
/// train features.
FeatureMatrix extract_frozen_features(model::Network<float>& net, const data::RunConfig& cfg,
                                      const data::DatasetManifest& manifest, Protocol protocol,
                                      const ExtractOptions& options = {});

/// {1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 1}.
std::vector<double> default_costs();

struct SvmOptions {
  std::size_t max_epochs = 200;
  double tolerance = 0.1;
  std::uint64_t seed = 0;
  bool standardize = true;
};

struct EvalReport {
  std::string modality;
  std::string train_protocol, test_protocol, pool;
  std::size_t train_rows = 0, test_samples = 0, num_classes = 0;
  std::vector<double> costs;
  std::vector<double> accuracies;
  double best_cost = 0.0;
  double best_accuracy = 0.0;

  bool operator==(const EvalReport&) const = default;
};

/// One-vs-all L2-regularized hinge-loss linear SVMs (dual coordinate
/// descent, bias as a constant feature) per cost. Clip decision values are
/// averaged per sample; the argmax is the sample prediction.
/// Throws ConfigError for a single-category train set and ShapeError on a
/// dimension mismatch.
EvalReport svm_probe(const FeatureMatrix& train, const FeatureMatrix& test, const std::vector<double>& costs,
                     const SvmOptions& options = {});

/// Extracts the modality's train-protocol features on the train split and
/// test_protocol features on the test split, then runs svm_probe. The
/// matrices are handed back when the out pointers are set.
EvalReport linear_probe(model::Network<float>& net, const data::RunConfig& cfg, const data::DatasetManifest& manifest,
                        Protocol test_protocol, const ExtractOptions& extract = {}, const SvmOptions& svm = {},
                        const std::vector<double>& costs = default_costs(), FeatureMatrix* train_out = nullptr,
                        FeatureMatrix* test_out = nullptr);

struct Neighbor {
  std::size_t row = 0;
  std::string sample_id;
  int label = 0;
  double distance = 0.0;
  bool operator==(const Neighbor&) const = default;
};

struct RetrievalReport {
  std::vector<std::size_t> ks;
  std::vector<double> recall;  // one per k
  std::vector<std::string> query_ids;
  std::vector<int> query_labels;
  std::vector<std::vector<Neighbor>> neighbors;  // top max(ks) per query

  bool operator==(const RetrievalReport&) const = default;
};

std::vector<std::size_t> default_ks();

/// Queries are per-sample means of the test rows; every train row is ranked
/// by cosine distance (ties broken by row index). A query is correct at k
/// when any of its k nearest rows shares its label. Throws NumericError for
/// a zero query.
RetrievalReport retrieval(const FeatureMatrix& test, const FeatureMatrix& train,
                          const std::vector<std::size_t>& ks = default_ks());

/// Reference implementation: full sort of all distances per query.
RetrievalReport retrieval_bruteforce(const FeatureMatrix& test, const FeatureMatrix& train,
                                     const std::vector<std::size_t>& ks = default_ks());

// --- serialization ------------------------------------------------------------

/// Binary block: "AVFM", u16 version, u64 N, u64 D, u8 dtype (1 = f32), then
/// N x D little-endian floats. Metadata goes to <path>.json.
void save_features(const std::filesystem::path& path, const FeatureMatrix& f);
FeatureMatrix load_features(const std::filesystem::path& path);

std::string to_json(const EvalReport& r);
EvalReport eval_report_from_json(const std::string& text);
/// neighbors are included when with_neighbors.
std::string to_json(const RetrievalReport& r, bool with_neighbors = true);
RetrievalReport retrieval_report_from_json(const std::string& text);

}  // namespace avssl::eval
