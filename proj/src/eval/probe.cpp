// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>

#include <Eigen/Core>

#include "avssl/core/error.hpp"
#include "avssl/core/rng.hpp"
#include "avssl/eval/evaluation.hpp"
#include "json.hpp"

namespace avssl::eval {

using nlohmann::ordered_json;

std::vector<double> default_costs() { return {1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 1.0}; }

std::vector<std::size_t> default_ks() { return {1, 5, 20}; }

namespace {

// Rows grouped by sample id in order of first appearance.
struct SampleGroups {
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<std::vector<std::size_t>> rows;
};

SampleGroups group_rows(const FeatureMatrix& f) {
  SampleGroups g;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < f.rows(); ++i) {
    auto [it, fresh] = index.emplace(f.sample_ids[i], g.ids.size());
    if (fresh) {
      g.ids.push_back(f.sample_ids[i]);
      g.labels.push_back(f.labels[i]);
      g.rows.emplace_back();
    }
    g.rows[it->second].push_back(i);
  }
  return g;
}

// Dual coordinate descent for min 1/2 |w|^2 + C sum max(0, 1 - y w.x).
// x rows carry a trailing constant 1 for the bias.
std::vector<float> train_binary(const std::vector<float>& x, std::size_t n, std::size_t d,
                                const std::vector<float>& y, const std::vector<float>& qii, double cost,
                                const SvmOptions& opt, Rng& rng) {
  std::vector<float> w(d, 0.0f);
  std::vector<double> alpha(n, 0.0);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < opt.max_epochs; ++epoch) {
    rng.shuffle(order);
    double pg_max = -INFINITY, pg_min = INFINITY;
    for (std::size_t i : order) {
      Eigen::Map<const Eigen::VectorXf> xi(x.data() + i * d, static_cast<Eigen::Index>(d));
      Eigen::Map<Eigen::VectorXf> wv(w.data(), static_cast<Eigen::Index>(d));
      const double g = y[i] * static_cast<double>(wv.dot(xi)) - 1.0;
      double pg = g;
      if (alpha[i] <= 0.0) pg = std::min(g, 0.0);
      else if (alpha[i] >= cost) pg = std::max(g, 0.0);
      pg_max = std::max(pg_max, pg);
      pg_min = std::min(pg_min, pg);
      if (pg != 0.0) {
        const double a = std::clamp(alpha[i] - g / qii[i], 0.0, cost);
        const auto delta = static_cast<float>((a - alpha[i]) * y[i]);
        alpha[i] = a;
        wv += delta * xi;
      }
    }
    if (pg_max - pg_min < opt.tolerance) break;
  }
  return w;
}

}  // namespace

EvalReport svm_probe(const FeatureMatrix& train, const FeatureMatrix& test, const std::vector<double>& costs,
                     const SvmOptions& options) {
  train.check();
  test.check();
  if (train.rows() == 0 || test.rows() == 0) throw ShapeError("svm_probe needs non-empty train and test features");
  if (train.dim != test.dim) {
    throw ShapeError("feature dimension mismatch: train " + std::to_string(train.dim) + ", test " +
                     std::to_string(test.dim));
  }
  if (costs.empty()) throw ConfigError("empty cost sweep");
  std::set<int> label_set(train.labels.begin(), train.labels.end());
  if (label_set.size() < 2) throw ConfigError("svm_probe needs at least 2 categories in the train features");
  const std::vector<int> classes(label_set.begin(), label_set.end());

  const std::size_t n = train.rows(), d0 = train.dim, d = d0 + 1;
  std::vector<double> mean(d0, 0.0), scale(d0, 1.0);
  if (options.standardize) {
    std::vector<double> sq(d0, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < d0; ++k) {
        const double v = train.row(i)[k];
        mean[k] += v;
        sq[k] += v * v;
      }
    }
    for (std::size_t k = 0; k < d0; ++k) {
      mean[k] /= static_cast<double>(n);
      const double var = sq[k] / static_cast<double>(n) - mean[k] * mean[k];
      scale[k] = var > 1e-12 ? 1.0 / std::sqrt(var) : 0.0;
    }
  }
  auto prepare = [&](const FeatureMatrix& f) {
    std::vector<float> x(f.rows() * d);
    for (std::size_t i = 0; i < f.rows(); ++i) {
      for (std::size_t k = 0; k < d0; ++k) {
        x[i * d + k] = static_cast<float>((f.row(i)[k] - mean[k]) * scale[k]);
      }
      x[i * d + d0] = 1.0f;
    }
    return x;
  };
  const auto xtr = prepare(train);
  const auto xte = prepare(test);
  std::vector<float> qii(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += static_cast<double>(xtr[i * d + k]) * xtr[i * d + k];
    qii[i] = static_cast<float>(std::max(s, 1e-12));
  }
  const auto groups = group_rows(test);

  EvalReport r;
  r.train_protocol = train.protocol;
  r.test_protocol = test.protocol;
  r.pool = train.pool;
  r.train_rows = n;
  r.test_samples = groups.ids.size();
  r.num_classes = classes.size();
  r.costs = costs;
  for (std::size_t ci = 0; ci < costs.size(); ++ci) {
    // scores[sample][class], averaged over the sample's clips
    std::vector<std::vector<double>> scores(groups.ids.size(), std::vector<double>(classes.size(), 0.0));
    for (std::size_t c = 0; c < classes.size(); ++c) {
      std::vector<float> y(n);
      for (std::size_t i = 0; i < n; ++i) y[i] = train.labels[i] == classes[c] ? 1.0f : -1.0f;
      Rng rng = Rng::derive(options.seed, {ci, c});
      const auto w = train_binary(xtr, n, d, y, qii, costs[ci], options, rng);
      for (std::size_t s = 0; s < groups.ids.size(); ++s) {
        double acc = 0.0;
        for (std::size_t i : groups.rows[s]) {
          double dot = 0.0;
          for (std::size_t k = 0; k < d; ++k) dot += static_cast<double>(w[k]) * xte[i * d + k];
          acc += dot;
        }
        scores[s][c] = acc / static_cast<double>(groups.rows[s].size());
      }
    }
    std::size_t correct = 0;
    for (std::size_t s = 0; s < groups.ids.size(); ++s) {
      const auto best = std::max_element(scores[s].begin(), scores[s].end()) - scores[s].begin();
      if (classes[static_cast<std::size_t>(best)] == groups.labels[s]) ++correct;
    }
    r.accuracies.push_back(static_cast<double>(correct) / static_cast<double>(groups.ids.size()));
  }
  r.modality = train.protocol.substr(0, train.protocol.find('_'));
  const auto best = std::max_element(r.accuracies.begin(), r.accuracies.end()) - r.accuracies.begin();
  r.best_cost = costs[static_cast<std::size_t>(best)];
  r.best_accuracy = r.accuracies[static_cast<std::size_t>(best)];
  return r;
}

EvalReport linear_probe(model::Network<float>& net, const data::RunConfig& cfg, const data::DatasetManifest& manifest,
                        Protocol test_protocol, const ExtractOptions& extract, const SvmOptions& svm,
                        const std::vector<double>& costs, FeatureMatrix* train_out, FeatureMatrix* test_out) {
  if (augmented(test_protocol)) {
    throw ConfigError("probe test protocol must be one of video_test, audio_test_2s, audio_test_5s");
  }
  const auto train_protocol = probe_protocols(modality(test_protocol)).first;
  ExtractOptions tr = extract, te = extract;
  tr.split = data::Split::train;
  te.split = data::Split::test;
  auto ftr = extract_frozen_features(net, cfg, manifest, train_protocol, tr);
  auto fte = extract_frozen_features(net, cfg, manifest, test_protocol, te);
  auto report = svm_probe(ftr, fte, costs, svm);
  if (train_out) *train_out = std::move(ftr);
  if (test_out) *test_out = std::move(fte);
  return report;
}

// --- retrieval --------------------------------------------------------------------

namespace {

struct Queries {
  SampleGroups groups;
  std::vector<std::vector<double>> vectors;
};

Queries make_queries(const FeatureMatrix& test) {
  Queries q;
  q.groups = group_rows(test);
  for (std::size_t s = 0; s < q.groups.ids.size(); ++s) {
    std::vector<double> v(test.dim, 0.0);
    for (std::size_t i : q.groups.rows[s]) {
      for (std::size_t k = 0; k < test.dim; ++k) v[k] += test.row(i)[k];
    }
    double norm = 0.0;
    for (auto& x : v) {
      x /= static_cast<double>(q.groups.rows[s].size());
      norm += x * x;
    }
    if (!(norm > 0.0)) throw NumericError("query '" + q.groups.ids[s] + "' has a zero feature vector");
    q.vectors.push_back(std::move(v));
  }
  return q;
}

std::vector<double> cosine_distances(const std::vector<double>& q, const FeatureMatrix& train) {
  double qn = 0.0;
  for (double x : q) qn += x * x;
  qn = std::sqrt(qn);
  std::vector<double> dist(train.rows());
  for (std::size_t j = 0; j < train.rows(); ++j) {
    const float* t = train.row(j);
    double dot = 0.0, tn = 0.0;
    for (std::size_t k = 0; k < train.dim; ++k) {
      dot += q[k] * t[k];
      tn += static_cast<double>(t[k]) * t[k];
    }
    dist[j] = tn > 0.0 ? 1.0 - dot / (qn * std::sqrt(tn)) : 1.0;
  }
  return dist;
}

void check_inputs(const FeatureMatrix& test, const FeatureMatrix& train, const std::vector<std::size_t>& ks) {
  test.check();
  train.check();
  if (test.rows() == 0 || train.rows() == 0) throw ShapeError("retrieval needs non-empty feature matrices");
  if (test.dim != train.dim) throw ShapeError("retrieval feature dimension mismatch");
  if (ks.empty() || std::find(ks.begin(), ks.end(), std::size_t{0}) != ks.end()) {
    throw ConfigError("retrieval ks must be positive");
  }
}

RetrievalReport finish(const Queries& q, const FeatureMatrix& train, const std::vector<std::size_t>& ks,
                       const std::vector<std::vector<std::size_t>>& ranked,
                       const std::vector<std::vector<double>>& dists) {
  RetrievalReport r;
  r.ks = ks;
  r.query_ids = q.groups.ids;
  r.query_labels = q.groups.labels;
  std::vector<std::size_t> hits(ks.size(), 0);
  for (std::size_t s = 0; s < ranked.size(); ++s) {
    std::vector<Neighbor> nb;
    for (std::size_t j : ranked[s]) nb.push_back({j, train.sample_ids[j], train.labels[j], dists[s][j]});
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      const std::size_t k = std::min(ks[ki], nb.size());
      for (std::size_t t = 0; t < k; ++t) {
        if (nb[t].label == q.groups.labels[s]) {
          ++hits[ki];
          break;
        }
      }
    }
    r.neighbors.push_back(std::move(nb));
  }
  for (std::size_t ki = 0; ki < ks.size(); ++ki) {
    r.recall.push_back(static_cast<double>(hits[ki]) / static_cast<double>(ranked.size()));
  }
  return r;
}

}  // namespace

RetrievalReport retrieval(const FeatureMatrix& test, const FeatureMatrix& train, const std::vector<std::size_t>& ks) {
  check_inputs(test, train, ks);
  const auto q = make_queries(test);
  const std::size_t top = std::min(*std::max_element(ks.begin(), ks.end()), train.rows());
  std::vector<std::vector<std::size_t>> ranked;
  std::vector<std::vector<double>> dists;
  for (const auto& v : q.vectors) {
    auto dist = cosine_distances(v, train);
    std::vector<std::size_t> idx(train.rows());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto less = [&](std::size_t a, std::size_t b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); };
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(top), idx.end(), less);
    idx.resize(top);
    ranked.push_back(std::move(idx));
    dists.push_back(std::move(dist));
  }
  return finish(q, train, ks, ranked, dists);
}

RetrievalReport retrieval_bruteforce(const FeatureMatrix& test, const FeatureMatrix& train,
                                     const std::vector<std::size_t>& ks) {
  check_inputs(test, train, ks);
  const auto q = make_queries(test);
  const std::size_t top = std::min(*std::max_element(ks.begin(), ks.end()), train.rows());
  std::vector<std::vector<std::size_t>> ranked;
  std::vector<std::vector<double>> dists;
  for (const auto& v : q.vectors) {
    auto dist = cosine_distances(v, train);
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t j = 0; j < dist.size(); ++j) all.emplace_back(dist[j], j);
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> idx;
    for (std::size_t t = 0; t < top; ++t) idx.push_back(all[t].second);
    ranked.push_back(std::move(idx));
    dists.push_back(std::move(dist));
  }
  return finish(q, train, ks, ranked, dists);
}

// --- reports ------------------------------------------------------------------------

std::string to_json(const EvalReport& r) {
  ordered_json j;
  j["modality"] = r.modality;
  j["train_protocol"] = r.train_protocol;
  j["test_protocol"] = r.test_protocol;
  j["pool"] = r.pool;
  j["train_rows"] = r.train_rows;
  j["test_samples"] = r.test_samples;
  j["num_classes"] = r.num_classes;
  j["costs"] = r.costs;
  j["accuracies"] = r.accuracies;
  j["best_cost"] = r.best_cost;
  j["best_accuracy"] = r.best_accuracy;
  return j.dump(2);
}

EvalReport eval_report_from_json(const std::string& text) {
  try {
    const auto j = ordered_json::parse(text);
    EvalReport r;
    r.modality = j.at("modality");
    r.train_protocol = j.at("train_protocol");
    r.test_protocol = j.at("test_protocol");
    r.pool = j.at("pool");
    r.train_rows = j.at("train_rows");
    r.test_samples = j.at("test_samples");
    r.num_classes = j.at("num_classes");
    r.costs = j.at("costs").get<std::vector<double>>();
    r.accuracies = j.at("accuracies").get<std::vector<double>>();
    r.best_cost = j.at("best_cost");
    r.best_accuracy = j.at("best_accuracy");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed eval report: ") + e.what());
  }
}

std::string to_json(const RetrievalReport& r, bool with_neighbors) {
  ordered_json j;
  j["ks"] = r.ks;
  ordered_json rec = ordered_json::object();
  for (std::size_t i = 0; i < r.ks.size(); ++i) rec["R@" + std::to_string(r.ks[i])] = r.recall[i];
  j["recall"] = rec;
  j["queries"] = r.query_ids.size();
  if (with_neighbors) {
    ordered_json qs = ordered_json::array();
    for (std::size_t s = 0; s < r.query_ids.size(); ++s) {
      ordered_json nb = ordered_json::array();
      for (const auto& n : r.neighbors[s]) {
        nb.push_back({{"row", n.row}, {"sample_id", n.sample_id}, {"label", n.label}, {"distance", n.distance}});
      }
      qs.push_back({{"query_id", r.query_ids[s]}, {"label", r.query_labels[s]}, {"neighbors", std::move(nb)}});
    }
    j["per_query"] = std::move(qs);
  }
  return j.dump(2);
}

RetrievalReport retrieval_report_from_json(const std::string& text) {
  try {
    const auto j = ordered_json::parse(text);
    RetrievalReport r;
    r.ks = j.at("ks").get<std::vector<std::size_t>>();
    for (auto k : r.ks) r.recall.push_back(j.at("recall").at("R@" + std::to_string(k)).get<double>());
    if (j.contains("per_query")) {
      for (const auto& q : j["per_query"]) {
        r.query_ids.push_back(q.at("query_id"));
        r.query_labels.push_back(q.at("label"));
        std::vector<Neighbor> nb;
        for (const auto& n : q.at("neighbors")) {
          nb.push_back({n.at("row"), n.at("sample_id"), n.at("label"), n.at("distance")});
        }
        r.neighbors.push_back(std::move(nb));
      }
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed retrieval report: ") + e.what());
  }
}

}  // namespace avssl::eval
