#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "ffdconv/autograd.hpp"
#include "ffdconv/ops.hpp"
#include "ffdconv/rng.hpp"
#include "ffdconv/tensor.hpp"

namespace ffdconv {

template <typename T>
struct FdDefaults;

template <>
struct FdDefaults<double> {
  static constexpr double eps = 1e-5;
  static constexpr double tol = 1e-6;
};

template <>
struct FdDefaults<float> {
  static constexpr float eps = 1e-3f;
  static constexpr float tol = 1e-4f;
};

template <typename T>
struct GradCheckResult {
  T max_rel = T(0);
  std::size_t coords_checked = 0;
  bool ok = true;
  std::string worst;  // "input=2 coord=17 analytic=... numeric=..."
};

// Reduces an arbitrary tensor-valued op output to a scalar with a fixed random
// projection so every output element influences the loss. Seeded explicitly so
// repeated loss evaluations see the same projection (check_gradients rebuilds
// the graph once per perturbed coordinate).
template <typename T>
Var projection_loss(Tape<T>& tape, Var v, std::uint64_t seed) {
  Rng rng(Rng::mix(seed, 0x70726f6a));
  Tensor<T> r(tape.value(v).shape());
  r.fill_uniform(rng, T(-1), T(1));
  return sum_all(tape, mul(tape, v, tape.constant(std::move(r))));
}

// Central-difference gradient verification.
//
// `build` maps (tape, input vars) to a scalar loss and must be a pure function
// of the input tensors: same inputs, same loss. Analytic gradients come from
// one reverse pass; each sampled coordinate is then perturbed by +/-eps with
// the loss rebuilt from scratch. Relative error uses
// |a - n| / max(1, |a|, |n|).
template <typename T, typename BuildFn>
GradCheckResult<T> check_gradients(BuildFn&& build, std::vector<Tensor<T>> inputs, Rng& rng,
                                   T eps = FdDefaults<T>::eps, T tol = FdDefaults<T>::tol,
                                   std::size_t max_coords_per_input = 8) {
  GradCheckResult<T> res;
  std::vector<Tensor<T>> analytic;
  {
    Tape<T> tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (auto& t : inputs) vars.push_back(tape.input(Tensor<T>(t)));
    Var loss = build(tape, vars);
    if (tape.value(loss).size() != 1) {
      throw ShapeError("check_gradients: build must return a scalar loss");
    }
    tape.backward(loss);
    for (Var v : vars) analytic.push_back(tape.grad_or_zeros(v));
  }
  auto eval = [&](const std::vector<Tensor<T>>& in) -> T {
    Tape<T> tape;
    std::vector<Var> vars;
    vars.reserve(in.size());
    for (const auto& t : in) vars.push_back(tape.input(Tensor<T>(t)));
    Var loss = build(tape, vars);
    return tape.value(loss)[0];
  };
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::size_t n = inputs[i].size();
    std::vector<std::size_t> coords;
    if (n <= max_coords_per_input) {
      for (std::size_t c = 0; c < n; ++c) coords.push_back(c);
    } else {
      for (std::size_t c = 0; c < max_coords_per_input; ++c)
        coords.push_back(rng.uniform_index(n));
    }
    for (std::size_t c : coords) {
      T saved = inputs[i][c];
      inputs[i][c] = saved + eps;
      T lp = eval(inputs);
      inputs[i][c] = saved - eps;
      T lm = eval(inputs);
      inputs[i][c] = saved;
      T numeric = (lp - lm) / (T(2) * eps);
      T a = analytic[i][c];
      T rel = std::abs(a - numeric) / std::max({T(1), std::abs(a), std::abs(numeric)});
      ++res.coords_checked;
      if (rel > res.max_rel) {
        res.max_rel = rel;
        res.worst = "input=" + std::to_string(i) + " coord=" + std::to_string(c) +
                    " analytic=" + std::to_string(a) + " numeric=" + std::to_string(numeric);
      }
    }
  }
  res.ok = res.max_rel < tol;
  return res;
}

// Gradient verification against the parameters of a store — the same path the
// optimizer consumes. `build` maps a fresh tape to a scalar loss and must be a
// pure function of the stored parameter values (evaluate with training-mode
// statistics updates disabled). Skips non-trainable buffers.
template <typename T, typename BuildFn>
GradCheckResult<T> check_param_gradients(BuildFn&& build, ParamStore<T>& store, Rng& rng,
                                         T eps = FdDefaults<T>::eps, T tol = FdDefaults<T>::tol,
                                         std::size_t max_coords_per_param = 8) {
  GradCheckResult<T> res;
  store.zero_grads();
  std::vector<Tensor<T>> analytic;
  {
    Tape<T> tape;
    Var loss = build(tape);
    if (tape.value(loss).size() != 1) {
      throw ShapeError("check_param_gradients: build must return a scalar loss");
    }
    tape.backward(loss);
  }
  for (std::size_t i = 0; i < store.count(); ++i) analytic.push_back(store.at(i).grad);
  auto eval = [&]() -> T {
    Tape<T> tape;
    Var loss = build(tape);
    return tape.value(loss)[0];
  };
  for (std::size_t i = 0; i < store.count(); ++i) {
    Parameter<T>& p = store.at(i);
    if (!p.trainable) continue;
    std::size_t n = p.value.size();
    std::vector<std::size_t> coords;
    if (n <= max_coords_per_param) {
      for (std::size_t c = 0; c < n; ++c) coords.push_back(c);
    } else {
      for (std::size_t c = 0; c < max_coords_per_param; ++c)
        coords.push_back(rng.uniform_index(n));
    }
    for (std::size_t c : coords) {
      T saved = p.value[c];
      p.value[c] = saved + eps;
      T lp = eval();
      p.value[c] = saved - eps;
      T lm = eval();
      p.value[c] = saved;
      T numeric = (lp - lm) / (T(2) * eps);
      T a = analytic[i][c];
      T rel = std::abs(a - numeric) / std::max({T(1), std::abs(a), std::abs(numeric)});
      ++res.coords_checked;
      if (rel > res.max_rel) {
        res.max_rel = rel;
        res.worst = "param=" + store.at(i).name + " coord=" + std::to_string(c) +
                    " analytic=" + std::to_string(a) + " numeric=" + std::to_string(numeric);
      }
    }
  }
  res.ok = res.max_rel < tol;
  return res;
}

}  // namespace ffdconv
