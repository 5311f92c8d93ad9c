#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ffdconv/errors.hpp"
#include "ffdconv/tensor.hpp"

namespace ffdconv {

// Learnable tensor with an accumulated gradient of the same shape.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;  // false for persistent buffers such as running stats

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v, bool train = true)
      : name(std::move(n)),
        value(std::move(v)),
        grad(Tensor<T>::zeros(value.shape())),
        trainable(train) {}

  void zero_grad() { grad.fill(T(0)); }
};

// Owns parameters in registration order; order is the serialization and
// optimizer-iteration order, so it must be deterministic.
template <typename T>
class ParamStore {
 public:
  Parameter<T>& add(const std::string& name, Tensor<T> value, bool trainable = true) {
    if (lookup_.count(name)) throw ConfigError("parameter registered twice: " + name);
    items_.push_back(std::make_unique<Parameter<T>>(name, std::move(value), trainable));
    lookup_[name] = items_.size() - 1;
    return *items_.back();
  }

  Parameter<T>* find(const std::string& name) {
    auto it = lookup_.find(name);
    return it == lookup_.end() ? nullptr : items_[it->second].get();
  }

  std::size_t count() const { return items_.size(); }
  Parameter<T>& at(std::size_t i) { return *items_[i]; }
  const Parameter<T>& at(std::size_t i) const { return *items_[i]; }

  std::size_t total_values() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p->value.size();
    return n;
  }

  std::size_t trainable_values() const {
    std::size_t n = 0;
    for (const auto& p : items_)
      if (p->trainable) n += p->value.size();
    return n;
  }

  void zero_grads() {
    for (auto& p : items_) p->zero_grad();
  }

  std::map<std::string, Tensor<T>> grad_map() const {
    std::map<std::string, Tensor<T>> out;
    for (const auto& p : items_) out.emplace(p->name, p->grad);
    return out;
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> items_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const { return id != static_cast<std::size_t>(-1); }
};

// Reverse-mode tape. Nodes are appended in execution order, which is a
// topological order of the DAG; backward walks them once in reverse.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  struct Node {
    const char* op;
    std::vector<Var> inputs;
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily during backward
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool needs_grad = false;
  };

  Var constant(Tensor<T> value) { return push("constant", {}, std::move(value), nullptr, false); }

  // Differentiable leaf that is not a parameter (used for gradient checks on inputs).
  Var input(Tensor<T> value) { return push("input", {}, std::move(value), nullptr, true); }

  // Binding the same parameter twice returns the existing leaf, so gradient
  // contributions from all uses accumulate on one node.
  Var parameter(Parameter<T>& p) {
    auto it = param_vars_.find(&p);
    if (it != param_vars_.end()) return it->second;
    Var v = push("parameter", {}, p.value, nullptr, true);
    nodes_[v.id].param = &p;
    param_vars_.emplace(&p, v);
    return v;
  }

  Var emplace(const char* op, std::vector<Var> inputs, Tensor<T> value, BackwardFn backward) {
    bool needs = false;
    for (Var v : inputs) needs = needs || nodes_.at(v.id).needs_grad;
    check_finite(value, op);
    return push(op, std::move(inputs), std::move(value), needs ? std::move(backward) : nullptr,
                needs);
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  const Node& node(Var v) const { return nodes_.at(v.id); }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient buffer of a node, allocated as zeros on first use. Backward
  // closures add into input buffers through this.
  Tensor<T>& grad_buffer(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor<T>::zeros(n.value.shape());
    return n.grad;
  }

  void accumulate_grad(Var v, const Tensor<T>& g) {
    Node& n = nodes_.at(v.id);
    if (!n.needs_grad) return;
    Tensor<T>& buf = grad_buffer(v);
    if (!buf.same_shape(g)) {
      throw ShapeError(std::string("accumulate_grad(") + n.op + "): gradient shape " +
                       shape_str(g.shape()) + " does not match value " +
                       shape_str(n.value.shape()));
    }
    T* dst = buf.data();
    const T* src = g.data();
    for (std::size_t i = 0; i < buf.size(); ++i) dst[i] += src[i];
  }

  const Tensor<T>& grad(Var v) const { return nodes_.at(v.id).grad; }

  Tensor<T> grad_or_zeros(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad.empty() ? Tensor<T>::zeros(n.value.shape()) : n.grad;
  }

  // Seeds a scalar output with gradient one.
  void backward(Var output) {
    backward(output, Tensor<T>::ones(nodes_.at(output.id).value.shape()));
  }

  // Seeds the output gradient and propagates to every reachable differentiable
  // leaf; parameter leaves accumulate into Parameter::grad.
  void backward(Var output, const Tensor<T>& seed) {
    if (nodes_.empty()) throw ShapeError("backward: empty tape");
    const Node& out = nodes_.at(output.id);
    if (!seed.same_shape(out.value)) {
      throw ShapeError("backward: seed shape " + shape_str(seed.shape()) +
                       " does not match output " + shape_str(out.value.shape()));
    }
    accumulate_grad(output, seed);
    for (std::size_t i = output.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.empty()) continue;
      if (n.backward) {
        n.backward(*this, i);
      } else if (n.param != nullptr) {
        T* dst = n.param->grad.data();
        const T* src = n.grad.data();
        for (std::size_t k = 0; k < n.grad.size(); ++k) dst[k] += src[k];
      }
    }
  }

  Node& mutable_node(std::size_t id) { return nodes_.at(id); }

 private:
  Var push(const char* op, std::vector<Var> inputs, Tensor<T> value, BackwardFn backward,
           bool needs) {
    nodes_.push_back(Node{op, std::move(inputs), std::move(value), Tensor<T>(),
                          std::move(backward), nullptr, needs});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::unordered_map<Parameter<T>*, Var> param_vars_;
};

}  // namespace ffdconv
