// SPDX-License-Identifier: Apache-2.0
#include "avssl/objective/objective.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "avssl/nn/ops.hpp"

namespace avssl::objective {

namespace {
constexpr std::array<std::string_view, kAggregateCount> kAggregateNames{"intra", "sync", "async",
                                                                        "video", "audio"};
constexpr std::array<std::string_view, kPairCount> kPairNames{"v1v2", "a1a2", "a1v1",
                                                              "a2v2", "a1v2", "a2v1"};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}
}  // namespace

std::string_view to_string(Aggregate a) { return kAggregateNames[static_cast<std::size_t>(a)]; }
std::string_view to_string(Pair p) { return kPairNames[static_cast<std::size_t>(p)]; }

LossMask LossMask::parse(std::string_view text) {
  LossMask m;
  while (!text.empty()) {
    const auto comma = text.find_first_of(",+");
    auto tok = trim(text.substr(0, comma));
    text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
    if (tok.empty()) continue;
    if (tok == "full" || tok == "crisscross") {
      m = m.with(Aggregate::intra).with(Aggregate::sync).with(Aggregate::async);
      continue;
    }
    bool found = false;
    for (std::size_t i = 0; i < kAggregateCount; ++i) {
      if (tok == kAggregateNames[i]) {
        m = m.with(static_cast<Aggregate>(i));
        found = true;
      }
    }
    if (!found) {
      throw ConfigError("unknown loss term '" + std::string(tok) +
                        "' (expected intra, sync, async, video, audio or full)");
    }
  }
  return m;
}

std::size_t LossMask::count() const { return static_cast<std::size_t>(std::popcount(bits_)); }

bool LossMask::needs_video() const {
  return has(Aggregate::intra) || has(Aggregate::sync) || has(Aggregate::async) || has(Aggregate::video);
}

bool LossMask::needs_audio() const {
  return has(Aggregate::intra) || has(Aggregate::sync) || has(Aggregate::async) || has(Aggregate::audio);
}

std::string LossMask::to_string() const {
  std::string s;
  for (std::size_t i = 0; i < kAggregateCount; ++i) {
    if (!has(static_cast<Aggregate>(i))) continue;
    if (!s.empty()) s += ",";
    s += kAggregateNames[i];
  }
  return s;
}

double neg_cosine(std::span<const double> p, std::span<const double> z) {
  if (p.size() != z.size()) throw ShapeError("neg_cosine: dimension mismatch");
  double pp = 0.0, zz = 0.0, pz = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    pp += p[i] * p[i];
    zz += z[i] * z[i];
    pz += p[i] * z[i];
  }
  if (!(pp > 0.0) || !(zz > 0.0)) throw NumericError("neg_cosine: zero-norm vector");
  // rounding can push collinear pairs a few ulps past the unit interval
  return -std::clamp(pz / (std::sqrt(pp) * std::sqrt(zz)), -1.0, 1.0);
}

double symmetrized_pair_loss(std::span<const double> p1, std::span<const double> z1,
                             std::span<const double> p2, std::span<const double> z2) {
  return 0.5 * neg_cosine(p1, z2) + 0.5 * neg_cosine(p2, z1);
}

template <typename T>
Var<T> neg_cosine(const Var<T>& p, const Var<T>& z) {
  return nn::neg_cosine_mean(p, nn::detach(z));
}

template <typename T>
Var<T> symmetrized_pair_loss(const Var<T>& p1, const Var<T>& z1, const Var<T>& p2, const Var<T>& z2) {
  if (p1->value.shape() != p2->value.shape()) {
    throw ShapeError("symmetrized_pair_loss: view shapes differ");
  }
  return nn::weighted_sum<T>({neg_cosine(p1, z2), neg_cosine(p2, z1)}, {0.5, 0.5});
}

template <typename T>
LossBreakdown LossGraph<T>::breakdown() const {
  LossBreakdown b;
  b.mask = mask;
  for (std::size_t i = 0; i < kPairCount; ++i) {
    if (pairs[i]) b.pairs[i] = static_cast<double>(pairs[i]->value[0]);
  }
  auto mean2 = [&](Pair x, Pair y) -> std::optional<double> {
    if (!b[x] || !b[y]) return std::nullopt;
    return (*b[x] + *b[y]) / 2.0;
  };
  b.intra = mean2(Pair::v1v2, Pair::a1a2);
  b.sync = mean2(Pair::a1v1, Pair::a2v2);
  b.async = mean2(Pair::a1v2, Pair::a2v1);
  b.total = static_cast<double>(total->value[0]);
  return b;
}

template <typename T>
LossGraph<T> crisscross_loss(const model::BranchOutputs<T>& out, const LossMask& mask) {
  if (mask.empty()) throw ConfigError("empty loss mask");
  if (mask.needs_video() && !out.has_video()) throw ShapeError("loss mask needs video outputs");
  if (mask.needs_audio() && !out.has_audio()) throw ShapeError("loss mask needs audio outputs");

  LossGraph<T> g;
  g.mask = mask;
  auto& P = g.pairs;
  auto idx = [](Pair p) { return static_cast<std::size_t>(p); };

  const double agg_w = 1.0 / static_cast<double>(mask.count());
  std::vector<Var<T>> terms;
  std::vector<double> weights;
  auto use = [&](Pair p, double w) {
    terms.push_back(P[idx(p)]);
    weights.push_back(w);
  };

  const bool v1v2 = mask.has(Aggregate::intra) || mask.has(Aggregate::video);
  const bool a1a2 = mask.has(Aggregate::intra) || mask.has(Aggregate::audio);
  if (v1v2) P[idx(Pair::v1v2)] = symmetrized_pair_loss(out.pv1, out.zv1, out.pv2, out.zv2);
  if (a1a2) P[idx(Pair::a1a2)] = symmetrized_pair_loss(out.pa1, out.za1, out.pa2, out.za2);
  if (mask.has(Aggregate::sync)) {
    P[idx(Pair::a1v1)] = symmetrized_pair_loss(out.pa1, out.za1, out.pv1, out.zv1);
    P[idx(Pair::a2v2)] = symmetrized_pair_loss(out.pa2, out.za2, out.pv2, out.zv2);
  }
  if (mask.has(Aggregate::async)) {
    P[idx(Pair::a1v2)] = symmetrized_pair_loss(out.pa1, out.za1, out.pv2, out.zv2);
    P[idx(Pair::a2v1)] = symmetrized_pair_loss(out.pa2, out.za2, out.pv1, out.zv1);
  }

  // Weight of a pair = sum over active aggregates containing it of
  // (1/|mask|) * (1/|aggregate members|).
  std::array<double, kPairCount> w{};
  if (mask.has(Aggregate::intra)) w[idx(Pair::v1v2)] += agg_w / 2, w[idx(Pair::a1a2)] += agg_w / 2;
  if (mask.has(Aggregate::video)) w[idx(Pair::v1v2)] += agg_w;
  if (mask.has(Aggregate::audio)) w[idx(Pair::a1a2)] += agg_w;
  if (mask.has(Aggregate::sync)) w[idx(Pair::a1v1)] += agg_w / 2, w[idx(Pair::a2v2)] += agg_w / 2;
  if (mask.has(Aggregate::async)) w[idx(Pair::a1v2)] += agg_w / 2, w[idx(Pair::a2v1)] += agg_w / 2;
  for (std::size_t i = 0; i < kPairCount; ++i) {
    if (w[i] != 0.0) use(static_cast<Pair>(i), w[i]);
  }
  g.total = nn::weighted_sum(terms, weights);
  return g;
}

#define AVSSL_INSTANTIATE_OBJECTIVE(T)                                                            \
  template Var<T> neg_cosine<T>(const Var<T>&, const Var<T>&);                                   \
  template Var<T> symmetrized_pair_loss<T>(const Var<T>&, const Var<T>&, const Var<T>&,          \
                                           const Var<T>&);                                       \
  template struct LossGraph<T>;                                                                  \
  template LossGraph<T> crisscross_loss<T>(const model::BranchOutputs<T>&, const LossMask&);

AVSSL_INSTANTIATE_OBJECTIVE(float)
AVSSL_INSTANTIATE_OBJECTIVE(double)

}  // namespace avssl::objective
