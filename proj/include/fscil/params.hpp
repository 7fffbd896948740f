#pragma once

#include <map>
#include <string>
#include <vector>

#include "fscil/error.hpp"
#include "fscil/graph.hpp"
#include "fscil/tensor.hpp"

namespace fscil {

// Named parameter set with per-parameter gradient and momentum storage.
// std::map keeps iteration order independent of insertion history.
class ParamStore {
  template <typename M>
  static auto& at(M& m, const std::string& name) {
    auto it = m.find(name);
    if (it == m.end()) throw ConflictError("unknown parameter: " + name);
    return it->second;
  }

 public:
  void add(const std::string& name, Tensor value) {
    if (params_.count(name)) throw ConflictError("parameter already present: " + name);
    grads_.emplace(name, Tensor::zeros(value.shape()));
    momentum_.emplace(name, Tensor::zeros(value.shape()));
    grad_set_.emplace(name, false);
    params_.emplace(name, std::move(value));
  }

  bool has(const std::string& name) const { return params_.count(name) > 0; }

  Tensor& param(const std::string& name) { return at(params_, name); }
  const Tensor& param(const std::string& name) const { return at(params_, name); }
  Tensor& grad(const std::string& name) { return at(grads_, name); }
  const Tensor& grad(const std::string& name) const { return at(grads_, name); }
  Tensor& momentum(const std::string& name) { return at(momentum_, name); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [k, v] : params_) out.push_back(k);
    return out;
  }

  std::size_t size() const { return params_.size(); }

  void remove(const std::string& name) {
    params_.erase(name);
    grads_.erase(name);
    momentum_.erase(name);
    grad_set_.erase(name);
  }

  void zero_grads() {
    for (auto& [name, g] : grads_) {
      g = Tensor::zeros(g.shape());
      grad_set_[name] = false;
    }
  }

  void accumulate_grad(const std::string& name, const Tensor& g) {
    Tensor& dst = at(grads_, name);
    if (!dst.same_shape(g)) throw DimensionError("gradient shape mismatch for " + name);
    for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += g[i];
    grad_set_[name] = true;
  }

  bool grad_populated(const std::string& name) const { return at(grad_set_, name); }

  // Deep copy of the parameter values only (teacher snapshots).
  std::map<std::string, Tensor> snapshot() const { return params_; }

 private:
  std::map<std::string, Tensor> params_;
  std::map<std::string, Tensor> grads_;
  std::map<std::string, Tensor> momentum_;
  std::map<std::string, bool> grad_set_;
};

// Leaf variables for a set of named parameters on a graph.
struct GraphBind {
  Graph* graph = nullptr;
  std::map<std::string, Var> vars;

  Var at(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw ConflictError("parameter not bound: " + name);
    return it->second;
  }
};

inline GraphBind bind_params(Graph& g, const ParamStore& store, const std::vector<std::string>& names) {
  GraphBind bind;
  bind.graph = &g;
  for (const auto& n : names) bind.vars.emplace(n, g.leaf(store.param(n)));
  return bind;
}

// Copies each bound leaf's gradient back into the store after backward().
inline void harvest_grads(ParamStore& store, const GraphBind& bind) {
  for (const auto& [name, var] : bind.vars) {
    store.accumulate_grad(name, bind.graph->grad(var));
  }
}

}  // namespace fscil
