// SPDX-License-Identifier: Apache-2.0
#include "avssl/nn/parameter_store.hpp"

namespace avssl::nn {

std::string_view to_string(ParamGroup g) {
  return g == ParamGroup::encoder ? "encoder" : "predictor";
}

std::string_view to_string(ModalityTag m) {
  switch (m) {
    case ModalityTag::video:
      return "video";
    case ModalityTag::audio:
      return "audio";
    case ModalityTag::shared:
      return "shared";
  }
  return "?";
}

template <typename T>
const Var<T>& ParameterStore<T>::add(const std::string& name, Tensor<T> init, ParamGroup group,
                                     ModalityTag modality) {
  if (index_.count(name) || buffers_.count(name)) {
    throw ConfigError("duplicate parameter name '" + name + "'");
  }
  index_.emplace(name, entries_.size());
  entries_.push_back({make_leaf(std::move(init), true, name), group, modality});
  return entries_.back().var;
}

template <typename T>
Tensor<T>& ParameterStore<T>::add_buffer(const std::string& name, Tensor<T> init) {
  if (index_.count(name) || buffers_.count(name)) {
    throw ConfigError("duplicate buffer name '" + name + "'");
  }
  buffer_order_.push_back(name);
  return buffers_.emplace(name, std::move(init)).first->second;
}

template <typename T>
BatchNormState<T> ParameterStore<T>::add_batch_norm_state(const std::string& prefix,
                                                          std::size_t channels) {
  add_buffer(prefix + ".running_mean", Tensor<T>({channels}, T(0)));
  add_buffer(prefix + ".running_var", Tensor<T>({channels}, T(1)));
  return batch_norm_state(prefix);
}

template <typename T>
BatchNormState<T> ParameterStore<T>::batch_norm_state(const std::string& prefix) {
  BatchNormState<T> s;
  s.running_mean = &buffer(prefix + ".running_mean");
  s.running_var = &buffer(prefix + ".running_var");
  return s;
}

template <typename T>
const Var<T>& ParameterStore<T>::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return entries_[it->second].var;
}

template <typename T>
Tensor<T>& ParameterStore<T>::buffer(const std::string& name) {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw ConfigError("unknown buffer '" + name + "'");
  return it->second;
}

template <typename T>
const Tensor<T>& ParameterStore<T>::buffer(const std::string& name) const {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw ConfigError("unknown buffer '" + name + "'");
  return it->second;
}

template <typename T>
std::size_t ParameterStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.var->value.size();
  return n;
}

template <typename T>
std::size_t ParameterStore<T>::parameter_count(ModalityTag m) const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (e.modality == m) n += e.var->value.size();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& e : entries_) e.var->clear_grad();
}

template <typename T>
ParameterStore<T> ParameterStore<T>::clone() const {
  return cast<T>();
}

template <typename T>
template <typename U>
ParameterStore<U> ParameterStore<T>::cast() const {
  ParameterStore<U> out;
  for (const auto& e : entries_) {
    out.add(e.var->name, e.var->value.template cast<U>(), e.group, e.modality);
  }
  for (const auto& name : buffer_order_) out.add_buffer(name, buffers_.at(name).template cast<U>());
  return out;
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template ParameterStore<double> ParameterStore<float>::cast<double>() const;
template ParameterStore<float> ParameterStore<double>::cast<float>() const;

}  // namespace avssl::nn
