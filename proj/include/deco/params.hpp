#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "deco/autodiff.hpp"
#include "deco/tensor.hpp"

namespace deco {

/// Named tensors in insertion order.
template <typename T>
class ParameterStore {
 public:
  basic_tensor<T>& add(const std::string& name, basic_tensor<T> value) {
    if (index_.count(name)) throw std::invalid_argument("parameter store: duplicate name '" + name + "'");
    index_.emplace(name, values_.size());
    names_.push_back(name);
    values_.push_back(std::move(value));
    return values_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  basic_tensor<T>& at(const std::string& name) { return values_[lookup(name)]; }
  const basic_tensor<T>& at(const std::string& name) const { return values_[lookup(name)]; }

  basic_tensor<T>& operator[](std::size_t i) { return values_[i]; }
  const basic_tensor<T>& operator[](std::size_t i) const { return values_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  /// Sum of element counts for every entry whose name starts with `prefix`.
  std::size_t parameter_count(const std::string& prefix) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < values_.size(); ++i)
      if (names_[i].rfind(prefix, 0) == 0) n += values_[i].size();
    return n;
  }

  /// Store with the same names and shapes, zero-filled.
  ParameterStore zeros_like() const {
    ParameterStore out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], basic_tensor<T>(values_[i].shape()));
    return out;
  }

  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], values_[i].template cast<U>());
    return out;
  }

  friend bool operator==(const ParameterStore& a, const ParameterStore& b) {
    return a.names_ == b.names_ && a.values_ == b.values_;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("parameter store: no entry named '" + name + "'");
    return it->second;
  }

  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<basic_tensor<T>> values_;
};

/// Lazily binds store entries into a graph as variables; repeated lookups share one node.
template <typename T>
class ParamBinding {
 public:
  ParamBinding(Graph<T>& graph, const ParameterStore<T>& store, bool trainable = true)
      : graph_(graph), store_(store), trainable_(trainable) {}

  Var<T> operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    Var<T> v = trainable_ ? graph_.variable(store_.at(name)) : graph_.constant(store_.at(name));
    bound_.emplace(name, v);
    return v;
  }

  Graph<T>& graph() { return graph_; }
  const ParameterStore<T>& store() const { return store_; }

  /// Gradients for every store entry after graph.backward(); unused entries get zeros.
  ParameterStore<T> gradients() const {
    ParameterStore<T> out;
    for (std::size_t i = 0; i < store_.size(); ++i) {
      auto it = bound_.find(store_.name(i));
      out.add(store_.name(i), it == bound_.end() ? basic_tensor<T>(store_[i].shape()) : graph_.grad(it->second));
    }
    return out;
  }

 private:
  Graph<T>& graph_;
  const ParameterStore<T>& store_;
  bool trainable_ = true;
  std::unordered_map<std::string, Var<T>> bound_;
};

/// Runs the reverse sweep from `loss` and collects d loss / d parameter for the whole store.
template <typename T>
ParameterStore<T> gradient(Graph<T>& graph, Var<T> loss, const ParamBinding<T>& params) {
  graph.backward(loss);
  return params.gradients();
}

}  // namespace deco
