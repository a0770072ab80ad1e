// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "avssl/nn/autograd.hpp"
#include "avssl/nn/ops.hpp"

namespace avssl::nn {

/// Optimizer parameter group. Predictor heads train at a constant rate,
/// everything else follows the encoder schedule.
enum class ParamGroup { encoder, predictor };

enum class ModalityTag { video, audio, shared };

std::string_view to_string(ParamGroup g);
std::string_view to_string(ModalityTag m);

/// Named trainable arrays plus non-trainable buffers (batch-norm running
/// statistics). Names are unique and iteration follows registration order.
template <typename T>
class ParameterStore {
 public:
  struct Entry {
    Var<T> var;
    ParamGroup group;
    ModalityTag modality;
  };

  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  const Var<T>& add(const std::string& name, Tensor<T> init, ParamGroup group, ModalityTag modality);
  Tensor<T>& add_buffer(const std::string& name, Tensor<T> init);

  /// Registers "<prefix>.running_mean" and "<prefix>.running_var".
  BatchNormState<T> add_batch_norm_state(const std::string& prefix, std::size_t channels);
  BatchNormState<T> batch_norm_state(const std::string& prefix);

  const Var<T>& param(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor<T>& buffer(const std::string& name);
  const Tensor<T>& buffer(const std::string& name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  const std::vector<std::string>& buffer_names() const { return buffer_order_; }

  std::size_t parameter_count() const;
  std::size_t parameter_count(ModalityTag m) const;
  void zero_grad();

  /// Deep copy (values, buffers, tags; no gradients).
  ParameterStore clone() const;
  template <typename U>
  ParameterStore<U> cast() const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::map<std::string, Tensor<T>> buffers_;
  std::vector<std::string> buffer_order_;
};

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

}  // namespace avssl::nn
