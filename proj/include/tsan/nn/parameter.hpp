#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "tsan/core/tape.hpp"
#include "tsan/core/tensor.hpp"

namespace tsan {

// Named trainable tensor with gradient accumulator and the two Adam moment
// buffers. value, grad, m and v always share one shape.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  std::vector<T> grad;
  std::vector<T> m;
  std::vector<T> v;

  Parameter(std::string n, const Shape& s)
      : name(std::move(n)),
        value(s),
        grad(static_cast<std::size_t>(s.numel()), T(0)),
        m(static_cast<std::size_t>(s.numel()), T(0)),
        v(static_cast<std::size_t>(s.numel()), T(0)) {}

  std::int64_t numel() const { return value.numel(); }

  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }

  // Enters a tape as a leaf; gradients accumulate into this->grad.
  Value use(Tape<T>& t) { return t.leaf_external(value, &grad); }
};

// Hierarchical registry keyed by dot-separated path names. Built once at
// model construction, read-only afterwards.
template <typename T>
class ParamStore {
 public:
  Parameter<T>* add(const std::string& name, const Shape& shape) {
    contract(index_.find(name) == index_.end(), "ParamStore: duplicate parameter name " + name);
    items_.push_back(std::make_unique<Parameter<T>>(name, shape));
    index_[name] = items_.size() - 1;
    return items_.back().get();
  }

  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : items_[it->second].get();
  }
  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : items_[it->second].get();
  }

  const std::vector<std::unique_ptr<Parameter<T>>>& items() const { return items_; }

  std::size_t size() const { return items_.size(); }

  std::int64_t total_params() const {
    std::int64_t n = 0;
    for (const auto& p : items_) n += p->numel();
    return n;
  }

  void zero_grads() {
    for (auto& p : items_) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace tsan
