#pragma once

#include <map>
#include <string>

#include "adios/tensor.hpp"

namespace adios {

/// Named parameter store. std::map keeps iteration order lexicographic,
/// which fixes the ordering of checkpoints, gradient reports and updates.
template <typename T>
class ParamSet {
public:
  struct Entry {
    Tensor<T> value;
    bool trainable = true;
  };

  using const_iterator = typename std::map<std::string, Entry>::const_iterator;
  using iterator = typename std::map<std::string, Entry>::iterator;

  void add(const std::string& name, Tensor<T> value, bool trainable = true) {
    check(entries_.find(name) == entries_.end(), "duplicate parameter name: " + name);
    entries_.emplace(name, Entry{std::move(value), trainable});
  }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  Tensor<T>& at(const std::string& name) {
    auto it = entries_.find(name);
    check(it != entries_.end(), "unknown parameter: " + name);
    return it->second.value;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = entries_.find(name);
    check(it != entries_.end(), "unknown parameter: " + name);
    return it->second.value;
  }
  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    check(it != entries_.end(), "unknown parameter: " + name);
    return it->second;
  }

  void set_trainable(const std::string& name, bool trainable) {
    auto it = entries_.find(name);
    check(it != entries_.end(), "unknown parameter: " + name);
    it->second.trainable = trainable;
  }

  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  int64_t scalar_count() const {
    int64_t n = 0;
    for (const auto& [name, e] : entries_) n += e.value.numel();
    return n;
  }

  const_iterator begin() const { return entries_.begin(); }
  const_iterator end() const { return entries_.end(); }
  iterator begin() { return entries_.begin(); }
  iterator end() { return entries_.end(); }

  /// Merge another set under a name prefix.
  void adopt(const std::string& prefix, const ParamSet& other) {
    for (const auto& [name, e] : other.entries_) add(prefix + name, e.value, e.trainable);
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& [name, e] : entries_) out.add(name, e.value.template cast<U>(), e.trainable);
    return out;
  }

private:
  std::map<std::string, Entry> entries_;
};

using ParamSetF = ParamSet<float>;
using ParamSetD = ParamSet<double>;

}  // namespace adios
