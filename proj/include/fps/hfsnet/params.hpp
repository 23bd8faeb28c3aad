#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fps/autograd/tensor.hpp"

namespace fps::hfsnet {

template <class T>
using FeatureMap = ag::Var<T>;  // [batch, channels, height, width]

/// Named, ordered collection of network tensors. Trainable entries are
/// leaves that may require gradients; buffers (batch-norm running
/// statistics) never do.
template <class T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    ag::Var<T> var;
    bool trainable = true;
  };

  ag::Var<T>& add(const std::string& name, ag::Shape shape, std::vector<T> values, bool trainable = true) {
    require(!index_.count(name), ErrorKind::state, "parameter '" + name + "' defined twice");
    index_[name] = entries_.size();
    entries_.push_back({name, ag::Var<T>::leaf(std::move(shape), std::move(values), trainable), trainable});
    return entries_.back().var;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const ag::Var<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), ErrorKind::state, "missing parameter '" + name + "'");
    return entries_[it->second].var;
  }
  ag::Var<T>& get(const std::string& name) {
    auto it = index_.find(name);
    require(it != index_.end(), ErrorKind::state, "missing parameter '" + name + "'");
    return entries_[it->second].var;
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count(bool trainable_only = true) const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable || !trainable_only) n += e.var.numel();
    return n;
  }

  /// Deep copy; `requires_grad` applies to trainable entries of the copy.
  ParamStore clone(bool requires_grad) const {
    ParamStore out;
    for (const auto& e : entries_) {
      out.add(e.name, e.var.shape(), e.var.value(), e.trainable && requires_grad);
      out.entries_.back().trainable = e.trainable;
    }
    return out;
  }

  /// Copies values from another store with the same manifest.
  void assign_values(const ParamStore& other) {
    require_same_manifest(other);
    for (std::size_t i = 0; i < entries_.size(); ++i) entries_[i].var.value() = other.entries_[i].var.value();
  }

  void require_same_manifest(const ParamStore& other) const {
    require(entries_.size() == other.entries_.size(), ErrorKind::state, "parameter manifests differ in length");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      require(entries_[i].name == other.entries_[i].name && entries_[i].var.shape() == other.entries_[i].var.shape(),
              ErrorKind::state, "parameter manifests differ at '" + entries_[i].name + "'");
    }
  }

  void zero_grad() {
    for (auto& e : entries_) e.var.zero_grad();
  }

  void set_requires_grad(bool r) {
    for (auto& e : entries_) e.var.set_requires_grad(r && e.trainable);
  }

  bool operator==(const ParamStore& o) const {
    if (entries_.size() != o.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name != o.entries_[i].name || entries_[i].var.shape() != o.entries_[i].var.shape() ||
          entries_[i].var.value() != o.entries_[i].var.value())
        return false;
    }
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Forward-pass mode. Training uses batch statistics; update_stats folds
/// them into the running buffers.
struct Context {
  bool training = false;
  bool update_stats = false;

  static Context train(bool update = true) { return {true, update}; }
  static Context eval() { return {false, false}; }
};

}  // namespace fps::hfsnet
