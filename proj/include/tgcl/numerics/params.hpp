#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tgcl/numerics/ndarray.hpp"

namespace tgcl::numerics {

// Named, ordered set of trainable tensors. Indices are stable handles.
template <typename T>
class ParamStore {
 public:
  std::size_t add(std::string name, NdArray<T> value) {
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return values_.size() - 1;
  }

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  NdArray<T>& value(std::size_t i) { return values_.at(i); }
  const NdArray<T>& value(std::size_t i) const { return values_.at(i); }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<NdArray<T>>& values() { return values_; }
  const std::vector<NdArray<T>>& values() const { return values_; }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    throw IndexError("no parameter named '" + name + "'");
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    return a.names_ == b.names_ && a.values_ == b.values_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<NdArray<T>> values_;
};

// Gradient buffers shaped like a ParamStore.
template <typename T>
class GradStore {
 public:
  GradStore() = default;
  explicit GradStore(const ParamStore<T>& params) {
    grads_.reserve(params.size());
    for (const auto& v : params.values()) grads_.emplace_back(v.rows(), v.cols());
  }

  std::size_t size() const { return grads_.size(); }
  NdArray<T>& operator[](std::size_t i) { return grads_[i]; }
  const NdArray<T>& operator[](std::size_t i) const { return grads_[i]; }

  void zero() {
    for (auto& g : grads_) g.fill(T(0));
  }

 private:
  std::vector<NdArray<T>> grads_;
};

}  // namespace tgcl::numerics
