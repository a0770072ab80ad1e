// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <vector>

#include "avssl/nn/autograd.hpp"

namespace avssl::nn {

/// Geometry of a 3-D convolution or pooling window, ordered (time, height, width).
struct Window3 {
  std::array<std::size_t, 3> kernel{1, 1, 1};
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> pad{0, 0, 0};

  std::size_t out_extent(std::size_t axis, std::size_t in) const;
};

/// Running statistics owned by a ParameterStore.
template <typename T>
struct BatchNormState {
  Tensor<T>* running_mean = nullptr;
  Tensor<T>* running_var = nullptr;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// x: [B, In], weight: [Out, In], bias: [Out] or null.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// x: [B, C, T, H, W], weight: [Co, C, kt, kh, kw]. No bias.
template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& weight, const Window3& window);

/// Channel axis is 1; x is [B, C] or [B, C, ...]. gamma/beta may be null
/// (no affine). In training mode batch statistics are used and the running
/// statistics are updated once per call.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  const BatchNormState<T>& state, bool training);

template <typename T>
Var<T> relu(const Var<T>& x);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

/// [B, C, ...] -> [B, C], mean over all trailing axes.
template <typename T>
Var<T> global_avg_pool(const Var<T>& x);

/// x: [B, C, T, H, W]; padded cells never win.
template <typename T>
Var<T> max_pool3d(const Var<T>& x, const Window3& window);

/// Row-wise x / ||x||. Throws NumericError on a zero row.
template <typename T>
Var<T> l2_normalize_rows(const Var<T>& x);

/// Negative cosine similarity averaged over rows:
/// -(1/B) sum_b <p_b, z_b> / (||p_b|| ||z_b||). Gradients flow into both
/// arguments if they require them; wrap z in detach() for a stop-gradient.
/// Throws NumericError if any row has zero norm.
template <typename T>
Var<T> neg_cosine_mean(const Var<T>& p, const Var<T>& z);

/// sum_i weights[i] * terms[i] over scalar nodes.
template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<double>& weights);

/// Reshape without copying semantics in the graph (value is copied).
template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

}  // namespace avssl::nn
