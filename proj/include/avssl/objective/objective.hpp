// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "avssl/model/model.hpp"

namespace avssl::objective {

using nn::Var;

/// Aggregates that may enter the total. intra/sync/async are the multi-modal
/// aggregates; video/audio select a single uni-modal term (L_{v1,v2} or
/// L_{a1,a2}) for uni-modal baselines.
enum class Aggregate { intra = 0, sync, async, video, audio };
inline constexpr std::size_t kAggregateCount = 5;

class LossMask {
 public:
  LossMask() = default;
  static LossMask full() { return LossMask{}.with(Aggregate::intra).with(Aggregate::sync).with(Aggregate::async); }
  /// Comma-separated aggregate names; "full" and "crisscross" mean intra,sync,async.
  static LossMask parse(std::string_view text);

  LossMask with(Aggregate a) const {
    LossMask m = *this;
    m.bits_ |= 1u << static_cast<unsigned>(a);
    return m;
  }
  bool has(Aggregate a) const { return (bits_ >> static_cast<unsigned>(a)) & 1u; }
  bool empty() const { return bits_ == 0; }
  std::size_t count() const;
  bool needs_video() const;
  bool needs_audio() const;
  std::string to_string() const;
  bool operator==(const LossMask&) const = default;

 private:
  unsigned bits_ = 0;
};

std::string_view to_string(Aggregate a);

/// Pairwise terms in fixed order.
enum class Pair { v1v2 = 0, a1a2, a1v1, a2v2, a1v2, a2v1 };
inline constexpr std::size_t kPairCount = 6;
std::string_view to_string(Pair p);

/// Scalar values of one objective evaluation. Terms that were not computed
/// (outside the mask) are empty.
struct LossBreakdown {
  std::array<std::optional<double>, kPairCount> pairs;
  std::optional<double> intra, sync, async;
  double total = 0.0;
  LossMask mask;

  const std::optional<double>& operator[](Pair p) const { return pairs[static_cast<std::size_t>(p)]; }
};

/// D(p, z) = -<p, z> / (||p|| ||z||). Throws NumericError on a zero vector.
double neg_cosine(std::span<const double> p, std::span<const double> z);

/// 1/2 D(p1, z2) + 1/2 D(p2, z1) on single vectors.
double symmetrized_pair_loss(std::span<const double> p1, std::span<const double> z1,
                             std::span<const double> p2, std::span<const double> z2);

/// Row-mean D(p, S(z)) as a graph node; z is detached.
template <typename T>
Var<T> neg_cosine(const Var<T>& p, const Var<T>& z);

/// Row-mean 1/2 D(p1, S(z2)) + 1/2 D(p2, S(z1)).
template <typename T>
Var<T> symmetrized_pair_loss(const Var<T>& p1, const Var<T>& z1, const Var<T>& p2, const Var<T>& z2);

template <typename T>
struct LossGraph {
  std::array<Var<T>, kPairCount> pairs;
  Var<T> total;
  LossMask mask;

  LossBreakdown breakdown() const;
};

/// Builds every pairwise term the mask needs and the total as the mean of
/// the active aggregates. Throws ConfigError on an empty mask and
/// ShapeError when a needed modality is missing from the outputs.
template <typename T>
LossGraph<T> crisscross_loss(const model::BranchOutputs<T>& out, const LossMask& mask);

}  // namespace avssl::objective
