#pragma once

#include <map>
#include <string>
#include <vector>

#include "maxw/rng.hpp"
#include "maxw/tensor.hpp"

namespace maxw {

// One named array owned by the model: a trainable weight or a running-stat
// buffer. Flags drive the optimizer (decay mask, backbone lr multiplier).
struct Param {
  std::string name;
  Shape shape;
  std::vector<double> value;
  bool trainable = true;
  bool backbone = false;
  bool decay = true;
};

class ParamStore {
 public:
  int add(std::string name, Shape shape, std::vector<double> value, bool trainable = true,
          bool backbone = false, bool decay = true) {
    if (index_.count(name)) throw ContractError("param '" + name + "' already registered");
    check_shape_valid(shape);
    if (numel(shape) != value.size())
      throw ContractError("param '" + name + "': shape " + shape_str(shape) + " needs " +
                          std::to_string(numel(shape)) + " values");
    index_[name] = static_cast<int>(params_.size());
    params_.push_back(Param{std::move(name), std::move(shape), std::move(value), trainable,
                            backbone, decay});
    return static_cast<int>(params_.size()) - 1;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  int index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown param '" + name + "'");
    return it->second;
  }

  Param& at(const std::string& name) { return params_[static_cast<std::size_t>(index_of(name))]; }
  const Param& at(const std::string& name) const {
    return params_[static_cast<std::size_t>(index_of(name))];
  }

  Param& operator[](int i) { return params_[static_cast<std::size_t>(i)]; }
  const Param& operator[](int i) const { return params_[static_cast<std::size_t>(i)]; }

  int size() const { return static_cast<int>(params_.size()); }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  std::size_t trainable_elements() const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (p.trainable) n += p.value.size();
    return n;
  }

 private:
  std::vector<Param> params_;
  std::map<std::string, int> index_;
};

// Per-graph view of a ParamStore: leaves when gradients are wanted, constants
// otherwise. Rebuilt for every forward pass.
class BoundParams {
 public:
  BoundParams(Graph& g, const ParamStore& store, bool with_grad) : store_(&store) {
    tensors_.reserve(static_cast<std::size_t>(store.size()));
    for (int i = 0; i < store.size(); ++i) {
      const Param& p = store[i];
      tensors_.push_back(with_grad && p.trainable ? g.leaf(p.shape, p.value)
                                                  : g.constant(p.shape, p.value));
    }
  }

  // Bind pre-made tensors (e.g. perturbed leaves in a finite-difference
  // harness); order must follow the store's registration order.
  BoundParams(const ParamStore& store, std::vector<Tensor> tensors)
      : store_(&store), tensors_(std::move(tensors)) {
    if (static_cast<int>(tensors_.size()) != store.size())
      throw ContractError("bound tensor count does not match the parameter store");
  }

  const Tensor& get(const std::string& name) const {
    return tensors_[static_cast<std::size_t>(store_->index_of(name))];
  }
  const Tensor& get(int i) const { return tensors_[static_cast<std::size_t>(i)]; }
  int size() const { return static_cast<int>(tensors_.size()); }

 private:
  const ParamStore* store_;
  std::vector<Tensor> tensors_;
};

// Initializers -------------------------------------------------------------

// Kaiming-style fan-in scaling for conv/linear weights.
inline std::vector<double> init_normal_fan_in(std::size_t n, std::size_t fan_in, Rng& rng) {
  std::vector<double> v(n);
  const double s = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& x : v) x = rng.normal() * s;
  return v;
}

inline std::vector<double> init_uniform(std::size_t n, double lo, double hi, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline std::vector<double> init_const(std::size_t n, double c) {
  return std::vector<double>(n, c);
}

}  // namespace maxw
