#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "ffdconv/autograd.hpp"
#include "ffdconv/errors.hpp"
#include "ffdconv/tensor.hpp"

namespace ffdconv {

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("broadcast: incompatible shapes " + shape_str(a) + " and " + shape_str(b) +
                       " at axis " + std::to_string(i));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Row-major strides with 0 on broadcast (size-1) axes, left-padded to rank.
inline std::vector<std::size_t> broadcast_strides(const Shape& s, std::size_t rank) {
  std::vector<std::size_t> strides(rank, 0);
  std::size_t acc = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    strides[rank - s.size() + i] = (s[i] == 1) ? 0 : acc;
    acc *= s[i];
  }
  return strides;
}

template <typename T, typename F>
Tensor<T> broadcast_binary(const Tensor<T>& a, const Tensor<T>& b, F&& f) {
  if (a.same_shape(b)) {
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = f(pa[i], pb[i]);
    return out;
  }
  if (b.size() == 1) {
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    T bv = b[0];
    T* po = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = f(pa[i], bv);
    return out;
  }
  if (a.size() == 1) {
    Tensor<T> out(b.shape());
    T av = a[0];
    const T* pb = b.data();
    T* po = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] = f(av, pb[i]);
    return out;
  }
  Shape os = broadcast_shape(a.shape(), b.shape());
  std::size_t rank = os.size();
  auto sa = broadcast_strides(a.shape(), rank);
  auto sb = broadcast_strides(b.shape(), rank);
  Tensor<T> out(os);
  std::vector<std::size_t> idx(rank, 0);
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  std::size_t ia = 0, ib = 0;
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    po[flat] = f(pa[ia], pb[ib]);
    for (std::size_t d = rank; d-- > 0;) {
      idx[d]++;
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < os[d]) break;
      ia -= sa[d] * os[d];
      ib -= sb[d] * os[d];
      idx[d] = 0;
    }
  }
  return out;
}

// Sums a gradient of broadcast shape back down to the operand shape.
template <typename T>
Tensor<T> reduce_to_shape(const Tensor<T>& g, const Shape& target) {
  if (g.shape() == target) return g;
  Tensor<T> out(target);
  std::size_t rank = g.rank();
  auto st = broadcast_strides(target, rank);
  std::vector<std::size_t> idx(rank, 0);
  const T* pg = g.data();
  T* po = out.data();
  std::size_t it = 0;
  const Shape& gs = g.shape();
  for (std::size_t flat = 0; flat < g.size(); ++flat) {
    po[it] += pg[flat];
    for (std::size_t d = rank; d-- > 0;) {
      idx[d]++;
      it += st[d];
      if (idx[d] < gs[d]) break;
      it -= st[d] * gs[d];
      idx[d] = 0;
    }
  }
  return out;
}

struct AxisLanes {
  std::size_t outer = 1, n = 1, inner = 1;
};

inline AxisLanes lanes_for(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  AxisLanes l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= s[i];
  l.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) l.inner *= s[i];
  return l;
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  Tensor<T> out = detail::broadcast_binary(tape.value(a), tape.value(b),
                                           [](T x, T y) { return x + y; });
  Shape as = tape.value(a).shape(), bs = tape.value(b).shape();
  return tape.emplace("add", {a, b}, std::move(out), [a, b, as, bs](Tape<T>& t, std::size_t id) {
    const Tensor<T>& g = t.mutable_node(id).grad;
    if (t.needs_grad(a)) t.accumulate_grad(a, detail::reduce_to_shape(g, as));
    if (t.needs_grad(b)) t.accumulate_grad(b, detail::reduce_to_shape(g, bs));
  });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  Tensor<T> out = detail::broadcast_binary(tape.value(a), tape.value(b),
                                           [](T x, T y) { return x * y; });
  Shape as = tape.value(a).shape(), bs = tape.value(b).shape();
  return tape.emplace("mul", {a, b}, std::move(out), [a, b, as, bs](Tape<T>& t, std::size_t id) {
    const Tensor<T>& g = t.mutable_node(id).grad;
    if (t.needs_grad(a)) {
      Tensor<T> ga =
          detail::broadcast_binary(g, t.value(b), [](T x, T y) { return x * y; });
      t.accumulate_grad(a, detail::reduce_to_shape(ga, as));
    }
    if (t.needs_grad(b)) {
      Tensor<T> gb =
          detail::broadcast_binary(g, t.value(a), [](T x, T y) { return x * y; });
      t.accumulate_grad(b, detail::reduce_to_shape(gb, bs));
    }
  });
}

template <typename T>
Var sub(Tape<T>& tape, Var a, Var b) {
  Tensor<T> out = detail::broadcast_binary(tape.value(a), tape.value(b),
                                           [](T x, T y) { return x - y; });
  Shape as = tape.value(a).shape(), bs = tape.value(b).shape();
  return tape.emplace("sub", {a, b}, std::move(out), [a, b, as, bs](Tape<T>& t, std::size_t id) {
    const Tensor<T>& g = t.mutable_node(id).grad;
    if (t.needs_grad(a)) t.accumulate_grad(a, detail::reduce_to_shape(g, as));
    if (t.needs_grad(b)) {
      Tensor<T> neg(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
      t.accumulate_grad(b, detail::reduce_to_shape(neg, bs));
    }
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T s) {
  Tensor<T> out(tape.value(a).shape());
  const Tensor<T>& x = tape.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
  return tape.emplace("scale", {a}, std::move(out), [a, s](Tape<T>& t, std::size_t id) {
    const Tensor<T>& g = t.mutable_node(id).grad;
    Tensor<T> ga(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * s;
    t.accumulate_grad(a, ga);
  });
}

template <typename T>
Var offset(Tape<T>& tape, Var a, T s) {
  Tensor<T> out(tape.value(a).shape());
  const Tensor<T>& x = tape.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + s;
  return tape.emplace("offset", {a}, std::move(out), [a](Tape<T>& t, std::size_t id) {
    t.accumulate_grad(a, t.mutable_node(id).grad);
  });
}

template <typename T>
Var relu(Tape<T>& tape, Var a) {
  const Tensor<T>& x = tape.value(a);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return tape.emplace("relu", {a}, std::move(out), [a](Tape<T>& t, std::size_t id) {
    const Tensor<T>& g = t.mutable_node(id).grad;
    const Tensor<T>& x = t.value(a);
    Tensor<T> ga(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = x[i] > T(0) ? g[i] : T(0);
    t.accumulate_grad(a, ga);
  });
}

template <typename T>
Var sigmoid(Tape<T>& tape, Var a) {
  const Tensor<T>& x = tape.value(a);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    T v = x[i];
    // branch keeps exp argument negative for stability at |v| ~ 1e3
    out[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  }
  return tape.emplace("sigmoid", {a}, std::move(out), [a](Tape<T>& t, std::size_t id) {
    const auto& node = t.mutable_node(id);
    const Tensor<T>& y = node.value;
    const Tensor<T>& g = node.grad;
    Tensor<T> ga(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * y[i] * (T(1) - y[i]);
    t.accumulate_grad(a, ga);
  });
}

template <typename T>
Var tanh_act(Tape<T>& tape, Var a) {
  const Tensor<T>& x = tape.value(a);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
  return tape.emplace("tanh", {a}, std::move(out), [a](Tape<T>& t, std::size_t id) {
    const auto& node = t.mutable_node(id);
    const Tensor<T>& y = node.value;
    const Tensor<T>& g = node.grad;
    Tensor<T> ga(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * (T(1) - y[i] * y[i]);
    t.accumulate_grad(a, ga);
  });
}

// ---- linear ----------------------------------------------------------------

// y[b,m] = sum_n x[b,n] * w[m,n] + bias[m]
template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, Var bias = Var{}) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(w);
  if (xv.rank() != 2 || wv.rank() != 2) {
    throw ShapeError("linear: expected rank-2 input and weight, got " + shape_str(xv.shape()) +
                     " and " + shape_str(wv.shape()));
  }
  std::size_t B = xv.dim(0), N = xv.dim(1), M = wv.dim(0);
  if (wv.dim(1) != N) {
    throw ShapeError("linear: inner axis mismatch, input " + shape_str(xv.shape()) +
                     " vs weight " + shape_str(wv.shape()));
  }
  const T* bp = nullptr;
  if (bias.valid()) {
    const Tensor<T>& bv = tape.value(bias);
    if (bv.size() != M) {
      throw ShapeError("linear: bias axis 0 has " + std::to_string(bv.size()) + " entries, want " +
                       std::to_string(M));
    }
    bp = bv.data();
  }
  Tensor<T> out({B, M});
  for (std::size_t b = 0; b < B; ++b) {
    const T* xr = xv.data() + b * N;
    T* yr = out.data() + b * M;
    for (std::size_t m = 0; m < M; ++m) {
      const T* wr = wv.data() + m * N;
      T acc = bp ? bp[m] : T(0);
      for (std::size_t n = 0; n < N; ++n) acc += xr[n] * wr[n];
      yr[m] = acc;
    }
  }
  std::vector<Var> ins = {x, w};
  if (bias.valid()) ins.push_back(bias);
  return tape.emplace("linear", std::move(ins), std::move(out),
                      [x, w, bias, B, N, M](Tape<T>& t, std::size_t id) {
                        const Tensor<T>& g = t.mutable_node(id).grad;
                        const Tensor<T>& xv = t.value(x);
                        const Tensor<T>& wv = t.value(w);
                        if (t.needs_grad(x)) {
                          Tensor<T>& gx = t.grad_buffer(x);
                          for (std::size_t b = 0; b < B; ++b)
                            for (std::size_t m = 0; m < M; ++m) {
                              T gv = g[b * M + m];
                              const T* wr = wv.data() + m * N;
                              T* gxr = gx.data() + b * N;
                              for (std::size_t n = 0; n < N; ++n) gxr[n] += gv * wr[n];
                            }
                        }
                        if (t.needs_grad(w)) {
                          Tensor<T>& gw = t.grad_buffer(w);
                          for (std::size_t b = 0; b < B; ++b)
                            for (std::size_t m = 0; m < M; ++m) {
                              T gv = g[b * M + m];
                              const T* xr = xv.data() + b * N;
                              T* gwr = gw.data() + m * N;
                              for (std::size_t n = 0; n < N; ++n) gwr[n] += gv * xr[n];
                            }
                        }
                        if (bias.valid() && t.needs_grad(bias)) {
                          Tensor<T>& gb = t.grad_buffer(bias);
                          for (std::size_t b = 0; b < B; ++b)
                            for (std::size_t m = 0; m < M; ++m) gb[m] += g[b * M + m];
                        }
                      });
}

// ---- softmax ---------------------------------------------------------------

namespace kernels {

// max-subtracted softmax along `axis`
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  auto l = detail::lanes_for(x.shape(), axis);
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = 0; i < l.inner; ++i) {
      std::size_t base = o * l.n * l.inner + i;
      T mx = px[base];
      for (std::size_t k = 1; k < l.n; ++k) mx = std::max(mx, px[base + k * l.inner]);
      T sum = T(0);
      for (std::size_t k = 0; k < l.n; ++k) {
        T e = std::exp(px[base + k * l.inner] - mx);
        po[base + k * l.inner] = e;
        sum += e;
      }
      T inv = T(1) / sum;
      for (std::size_t k = 0; k < l.n; ++k) po[base + k * l.inner] *= inv;
    }
  }
  return out;
}

}  // namespace kernels

template <typename T>
Var softmax(Tape<T>& tape, Var a, std::size_t axis) {
  Tensor<T> out = kernels::softmax(tape.value(a), axis);
  return tape.emplace("softmax", {a}, std::move(out), [a, axis](Tape<T>& t, std::size_t id) {
    const auto& node = t.mutable_node(id);
    const Tensor<T>& y = node.value;
    const Tensor<T>& g = node.grad;
    auto l = detail::lanes_for(y.shape(), axis);
    Tensor<T> ga(y.shape());
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t i = 0; i < l.inner; ++i) {
        std::size_t base = o * l.n * l.inner + i;
        T dot = T(0);
        for (std::size_t k = 0; k < l.n; ++k)
          dot += g[base + k * l.inner] * y[base + k * l.inner];
        for (std::size_t k = 0; k < l.n; ++k) {
          std::size_t ix = base + k * l.inner;
          ga[ix] = y[ix] * (g[ix] - dot);
        }
      }
    }
    t.accumulate_grad(a, ga);
  });
}

// ---- pooling ---------------------------------------------------------------

enum class PoolMode { kAvg, kMax };

// 2-d pooling over the trailing (time, frequency) axes of [B,C,T,F].
template <typename T>
Var pool2d(Tape<T>& tape, Var a, PoolMode mode, std::size_t wt, std::size_t wf, std::size_t st = 0,
           std::size_t sf = 0) {
  if (st == 0) st = wt;
  if (sf == 0) sf = wf;
  const Tensor<T>& x = tape.value(a);
  if (x.rank() != 4) throw ShapeError("pool2d: expected [B,C,T,F], got " + shape_str(x.shape()));
  std::size_t B = x.dim(0), C = x.dim(1), Tt = x.dim(2), F = x.dim(3);
  if (wt > Tt || wf > F) {
    throw ShapeError("pool2d: window (" + std::to_string(wt) + "," + std::to_string(wf) +
                     ") exceeds input extents " + shape_str(x.shape()));
  }
  std::size_t To = (Tt - wt) / st + 1;
  std::size_t Fo = (F - wf) / sf + 1;
  Tensor<T> out({B, C, To, Fo});
  std::vector<std::uint32_t> argmax;
  if (mode == PoolMode::kMax) argmax.resize(out.size());
  T inv = T(1) / static_cast<T>(wt * wf);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t ot = 0; ot < To; ++ot)
        for (std::size_t of = 0; of < Fo; ++of) {
          std::size_t oi = ((b * C + c) * To + ot) * Fo + of;
          if (mode == PoolMode::kAvg) {
            T acc = T(0);
            for (std::size_t i = 0; i < wt; ++i) {
              const T* row = x.data() + ((b * C + c) * Tt + ot * st + i) * F + of * sf;
              for (std::size_t j = 0; j < wf; ++j) acc += row[j];
            }
            out[oi] = acc * inv;
          } else {
            std::size_t best = ((b * C + c) * Tt + ot * st) * F + of * sf;
            T bv = x[best];
            for (std::size_t i = 0; i < wt; ++i)
              for (std::size_t j = 0; j < wf; ++j) {
                std::size_t ix = ((b * C + c) * Tt + ot * st + i) * F + of * sf + j;
                if (x[ix] > bv) {
                  bv = x[ix];
                  best = ix;
                }
              }
            out[oi] = bv;
            argmax[oi] = static_cast<std::uint32_t>(best);
          }
        }
  return tape.emplace(
      "pool2d", {a}, std::move(out),
      [a, mode, wt, wf, st, sf, argmax = std::move(argmax)](Tape<T>& t, std::size_t id) {
        const auto& node = t.mutable_node(id);
        const Tensor<T>& g = node.grad;
        const Shape& os = node.value.shape();
        Tensor<T>& gx = t.grad_buffer(a);
        std::size_t B = os[0], C = os[1], To = os[2], Fo = os[3];
        std::size_t Tt = t.value(a).dim(2), F = t.value(a).dim(3);
        if (mode == PoolMode::kMax) {
          for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
        } else {
          T inv = T(1) / static_cast<T>(wt * wf);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t ot = 0; ot < To; ++ot)
                for (std::size_t of = 0; of < Fo; ++of) {
                  T gv = g[((b * C + c) * To + ot) * Fo + of] * inv;
                  for (std::size_t i = 0; i < wt; ++i) {
                    T* row = gx.data() + ((b * C + c) * Tt + ot * st + i) * F + of * sf;
                    for (std::size_t j = 0; j < wf; ++j) row[j] += gv;
                  }
                }
        }
      });
}

template <typename T>
Var global_avg_pool(Tape<T>& tape, Var a) {
  const Tensor<T>& x = tape.value(a);
  return pool2d(tape, a, PoolMode::kAvg, x.dim(2), x.dim(3));
}

// ---- shape ops -------------------------------------------------------------

template <typename T>
Var reshape(Tape<T>& tape, Var a, Shape shape) {
  Tensor<T> out = tape.value(a).reshaped(shape);
  Shape orig = tape.value(a).shape();
  return tape.emplace("reshape", {a}, std::move(out), [a, orig](Tape<T>& t, std::size_t id) {
    t.accumulate_grad(a, t.mutable_node(id).grad.reshaped(orig));
  });
}

namespace kernels {

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  std::size_t rank = x.rank();
  if (perm.size() != rank) throw ShapeError("permute: perm rank mismatch");
  Shape os(rank);
  for (std::size_t i = 0; i < rank; ++i) os[i] = x.dim(perm[i]);
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * x.dim(i + 1);
  std::vector<std::size_t> step(rank);
  for (std::size_t i = 0; i < rank; ++i) step[i] = in_strides[perm[i]];
  Tensor<T> out(os);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  const T* px = x.data();
  T* po = out.data();
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    po[flat] = px[src];
    for (std::size_t d = rank; d-- > 0;) {
      idx[d]++;
      src += step[d];
      if (idx[d] < os[d]) break;
      src -= step[d] * os[d];
      idx[d] = 0;
    }
  }
  return out;
}

}  // namespace kernels

template <typename T>
Var permute(Tape<T>& tape, Var a, std::vector<std::size_t> perm) {
  Tensor<T> out = kernels::permute(tape.value(a), perm);
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  return tape.emplace("permute", {a}, std::move(out),
                      [a, inv = std::move(inv)](Tape<T>& t, std::size_t id) {
                        t.accumulate_grad(a, kernels::permute(t.mutable_node(id).grad, inv));
                      });
}

template <typename T>
Var slice(Tape<T>& tape, Var a, std::size_t axis, std::size_t start, std::size_t len) {
  const Tensor<T>& x = tape.value(a);
  auto l = detail::lanes_for(x.shape(), axis);
  if (start + len > l.n) {
    throw ShapeError("slice: [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") out of range on axis " + std::to_string(axis) + " of " +
                     shape_str(x.shape()));
  }
  Shape os = x.shape();
  os[axis] = len;
  Tensor<T> out(os);
  const T* px = x.data();
  T* po = out.data();
  for (std::size_t o = 0; o < l.outer; ++o) {
    const T* src = px + (o * l.n + start) * l.inner;
    T* dst = po + o * len * l.inner;
    std::copy(src, src + len * l.inner, dst);
  }
  return tape.emplace("slice", {a}, std::move(out),
                      [a, axis, start, len, l](Tape<T>& t, std::size_t id) {
                        const Tensor<T>& g = t.mutable_node(id).grad;
                        Tensor<T>& gx = t.grad_buffer(a);
                        for (std::size_t o = 0; o < l.outer; ++o) {
                          T* dst = gx.data() + (o * l.n + start) * l.inner;
                          const T* src = g.data() + o * len * l.inner;
                          for (std::size_t i = 0; i < len * l.inner; ++i) dst[i] += src[i];
                        }
                      });
}

template <typename T>
Var concat(Tape<T>& tape, const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Tensor<T>& first = tape.value(parts[0]);
  Shape os = first.shape();
  std::size_t total = 0;
  std::vector<std::size_t> sizes(parts.size());
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor<T>& v = tape.value(parts[p]);
    if (v.rank() != first.rank()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < v.rank(); ++d) {
      if (d != axis && v.dim(d) != first.dim(d)) {
        throw ShapeError("concat: shapes differ off-axis at axis " + std::to_string(d) + ": " +
                         shape_str(v.shape()) + " vs " + shape_str(first.shape()));
      }
    }
    sizes[p] = v.dim(axis);
    total += sizes[p];
  }
  os[axis] = total;
  auto l = detail::lanes_for(os, axis);
  Tensor<T> out(os);
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor<T>& v = tape.value(parts[p]);
    for (std::size_t o = 0; o < l.outer; ++o) {
      const T* src = v.data() + o * sizes[p] * l.inner;
      T* dst = out.data() + (o * total + off) * l.inner;
      std::copy(src, src + sizes[p] * l.inner, dst);
    }
    off += sizes[p];
  }
  return tape.emplace("concat", std::vector<Var>(parts), std::move(out),
                      [parts, axis, sizes, total, l](Tape<T>& t, std::size_t id) {
                        const Tensor<T>& g = t.mutable_node(id).grad;
                        std::size_t off = 0;
                        for (std::size_t p = 0; p < parts.size(); ++p) {
                          if (t.needs_grad(parts[p])) {
                            Tensor<T>& gp = t.grad_buffer(parts[p]);
                            for (std::size_t o = 0; o < l.outer; ++o) {
                              const T* src = g.data() + (o * total + off) * l.inner;
                              T* dst = gp.data() + o * sizes[p] * l.inner;
                              for (std::size_t i = 0; i < sizes[p] * l.inner; ++i)
                                dst[i] += src[i];
                            }
                          }
                          off += sizes[p];
                        }
                      });
}

// ---- reductions ------------------------------------------------------------

template <typename T>
Var sum_all(Tape<T>& tape, Var a) {
  const Tensor<T>& x = tape.value(a);
  T acc = T(0);
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i];
  return tape.emplace("sum_all", {a}, Tensor<T>::scalar(acc), [a](Tape<T>& t, std::size_t id) {
    T gv = t.mutable_node(id).grad[0];
    Tensor<T>& gx = t.grad_buffer(a);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gv;
  });
}

template <typename T>
Var mean_all(Tape<T>& tape, Var a) {
  std::size_t n = tape.value(a).size();
  return scale(tape, sum_all(tape, a), T(1) / static_cast<T>(n));
}

template <typename T>
Var sum_axis(Tape<T>& tape, Var a, std::size_t axis) {
  const Tensor<T>& x = tape.value(a);
  auto l = detail::lanes_for(x.shape(), axis);
  Shape os;
  for (std::size_t d = 0; d < x.rank(); ++d)
    if (d != axis) os.push_back(x.dim(d));
  if (os.empty()) os = {1};
  Tensor<T> out(os);
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t i = 0; i < l.inner; ++i) {
      T acc = T(0);
      for (std::size_t k = 0; k < l.n; ++k) acc += x[(o * l.n + k) * l.inner + i];
      out[o * l.inner + i] = acc;
    }
  return tape.emplace("sum_axis", {a}, std::move(out), [a, l](Tape<T>& t, std::size_t id) {
    const Tensor<T>& g = t.mutable_node(id).grad;
    Tensor<T>& gx = t.grad_buffer(a);
    for (std::size_t o = 0; o < l.outer; ++o)
      for (std::size_t i = 0; i < l.inner; ++i) {
        T gv = g[o * l.inner + i];
        for (std::size_t k = 0; k < l.n; ++k) gx[(o * l.n + k) * l.inner + i] += gv;
      }
  });
}

template <typename T>
Var mean_axis(Tape<T>& tape, Var a, std::size_t axis) {
  std::size_t n = tape.value(a).dim(axis);
  return scale(tape, sum_axis(tape, a, axis), T(1) / static_cast<T>(n));
}

// ---- row standardization (Filter-Norm core) --------------------------------

// Per-lane standardization along the last axis: (x - mean) / sqrt(var + eps).
template <typename T>
Var row_standardize(Tape<T>& tape, Var a, T eps) {
  const Tensor<T>& x = tape.value(a);
  if (x.rank() < 1 || x.dim(x.rank() - 1) < 2) {
    throw ShapeError("row_standardize: last axis must have length >= 2, got " +
                     shape_str(x.shape()));
  }
  std::size_t n = x.dim(x.rank() - 1);
  std::size_t rows = x.size() / n;
  Tensor<T> out(x.shape());
  std::vector<T> inv_sigma(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* px = x.data() + r * n;
    T* po = out.data() + r * n;
    T mean = T(0);
    for (std::size_t i = 0; i < n; ++i) mean += px[i];
    mean /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t i = 0; i < n; ++i) {
      T d = px[i] - mean;
      var += d * d;
    }
    var /= static_cast<T>(n);
    T inv = T(1) / std::sqrt(var + eps);
    inv_sigma[r] = inv;
    for (std::size_t i = 0; i < n; ++i) po[i] = (px[i] - mean) * inv;
  }
  return tape.emplace("row_standardize", {a}, std::move(out),
                      [a, n, rows, inv_sigma = std::move(inv_sigma)](Tape<T>& t, std::size_t id) {
                        const auto& node = t.mutable_node(id);
                        const Tensor<T>& y = node.value;  // already standardized
                        const Tensor<T>& g = node.grad;
                        Tensor<T>& gx = t.grad_buffer(a);
                        for (std::size_t r = 0; r < rows; ++r) {
                          const T* py = y.data() + r * n;
                          const T* pg = g.data() + r * n;
                          T* pgx = gx.data() + r * n;
                          T mg = T(0), mgy = T(0);
                          for (std::size_t i = 0; i < n; ++i) {
                            mg += pg[i];
                            mgy += pg[i] * py[i];
                          }
                          mg /= static_cast<T>(n);
                          mgy /= static_cast<T>(n);
                          T inv = inv_sigma[r];
                          for (std::size_t i = 0; i < n; ++i)
                            pgx[i] += inv * (pg[i] - mg - py[i] * mgy);
                        }
                      });
}

// ---- batch normalization ----------------------------------------------------

template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(Tensor<T>::zeros({std::max<std::size_t>(channels, 1)})),
        running_var(Tensor<T>::ones({std::max<std::size_t>(channels, 1)})) {}
};

// Channel-wise normalization of [B,C,T,F]. Training mode normalizes by batch
// statistics (population variance) and optionally updates running statistics
// (unbiased variance); eval mode uses the stored running statistics.
template <typename T>
Var batch_norm(Tape<T>& tape, Var a, Var gamma, Var beta, Tensor<T>& running_mean,
               Tensor<T>& running_var, T momentum, bool training, bool update_stats,
               T eps = T(1e-5)) {
  const Tensor<T>& x = tape.value(a);
  if (x.rank() != 4) throw ShapeError("batch_norm: expected [B,C,T,F], got " + shape_str(x.shape()));
  std::size_t B = x.dim(0), C = x.dim(1), Tt = x.dim(2), F = x.dim(3);
  std::size_t n = B * Tt * F;
  const Tensor<T>& gv = tape.value(gamma);
  const Tensor<T>& bv = tape.value(beta);
  if (gv.size() != C || bv.size() != C) {
    throw ShapeError("batch_norm: affine parameters must have one entry per channel (axis 1)");
  }
  std::vector<T> mean(C), inv_sigma(C);
  if (training) {
    for (std::size_t c = 0; c < C; ++c) {
      T m = T(0);
      for (std::size_t b = 0; b < B; ++b) {
        const T* p = x.data() + (b * C + c) * Tt * F;
        for (std::size_t i = 0; i < Tt * F; ++i) m += p[i];
      }
      m /= static_cast<T>(n);
      T var = T(0);
      for (std::size_t b = 0; b < B; ++b) {
        const T* p = x.data() + (b * C + c) * Tt * F;
        for (std::size_t i = 0; i < Tt * F; ++i) {
          T d = p[i] - m;
          var += d * d;
        }
      }
      var /= static_cast<T>(n);
      mean[c] = m;
      inv_sigma[c] = T(1) / std::sqrt(var + eps);
      if (update_stats) {
        T unbiased = n > 1 ? var * static_cast<T>(n) / static_cast<T>(n - 1) : var;
        running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * m;
        running_var[c] = (T(1) - momentum) * running_var[c] + momentum * unbiased;
      }
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = running_mean[c];
      inv_sigma[c] = T(1) / std::sqrt(running_var[c] + eps);
    }
  }
  Tensor<T> out(x.shape());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const T* p = x.data() + (b * C + c) * Tt * F;
      T* po = out.data() + (b * C + c) * Tt * F;
      T m = mean[c], inv = inv_sigma[c], ga = gv[c], be = bv[c];
      for (std::size_t i = 0; i < Tt * F; ++i) po[i] = (p[i] - m) * inv * ga + be;
    }
  return tape.emplace(
      "batch_norm", {a, gamma, beta}, std::move(out),
      [a, gamma, beta, B, C, Tt, F, n, training, mean = std::move(mean),
       inv_sigma = std::move(inv_sigma)](Tape<T>& t, std::size_t id) {
        const Tensor<T>& g = t.mutable_node(id).grad;
        const Tensor<T>& x = t.value(a);
        const Tensor<T>& gv = t.value(gamma);
        std::size_t plane = Tt * F;
        for (std::size_t c = 0; c < C; ++c) {
          T m = mean[c], inv = inv_sigma[c];
          T sum_g = T(0), sum_gx = T(0);
          for (std::size_t b = 0; b < B; ++b) {
            const T* pg = g.data() + (b * C + c) * plane;
            const T* px = x.data() + (b * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_g += pg[i];
              sum_gx += pg[i] * (px[i] - m) * inv;
            }
          }
          if (t.needs_grad(gamma)) t.grad_buffer(gamma)[c] += sum_gx;
          if (t.needs_grad(beta)) t.grad_buffer(beta)[c] += sum_g;
          if (t.needs_grad(a)) {
            Tensor<T>& gx = t.grad_buffer(a);
            T ga = gv[c];
            T mg = sum_g / static_cast<T>(n);
            T mgx = sum_gx / static_cast<T>(n);
            for (std::size_t b = 0; b < B; ++b) {
              const T* pg = g.data() + (b * C + c) * plane;
              const T* px = x.data() + (b * C + c) * plane;
              T* pgx = gx.data() + (b * C + c) * plane;
              if (training) {
                for (std::size_t i = 0; i < plane; ++i) {
                  T xh = (px[i] - m) * inv;
                  pgx[i] += ga * inv * (pg[i] - mg - xh * mgx);
                }
              } else {
                for (std::size_t i = 0; i < plane; ++i) pgx[i] += ga * inv * pg[i];
              }
            }
          }
        }
      });
}

template <typename T>
Var batch_norm(Tape<T>& tape, Var a, Var gamma, Var beta, BatchNormState<T>& state, bool training,
               bool update_stats, T eps = T(1e-5)) {
  return batch_norm(tape, a, gamma, beta, state.running_mean, state.running_var, state.momentum,
                    training, update_stats, eps);
}

// ---- losses ----------------------------------------------------------------

// Mean binary cross-entropy with log arguments clamped at 1e-7. The clamp
// zeroes the corresponding gradient term (subgradient of the clamped loss).
template <typename T>
Var binary_cross_entropy(Tape<T>& tape, Var pred, const Tensor<T>& target) {
  const Tensor<T>& p = tape.value(pred);
  if (!p.same_shape(target)) {
    throw ShapeError("binary_cross_entropy: prediction " + shape_str(p.shape()) +
                     " vs target " + shape_str(target.shape()));
  }
  const T clamp = T(1e-7);
  T acc = T(0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc -= target[i] * std::log(std::max(p[i], clamp)) +
           (T(1) - target[i]) * std::log(std::max(T(1) - p[i], clamp));
  }
  acc /= static_cast<T>(p.size());
  return tape.emplace("bce", {pred}, Tensor<T>::scalar(acc),
                      [pred, target, clamp](Tape<T>& t, std::size_t id) {
                        T gv = t.mutable_node(id).grad[0];
                        const Tensor<T>& p = t.value(pred);
                        T inv_n = T(1) / static_cast<T>(p.size());
                        Tensor<T> gp(p.shape());
                        for (std::size_t i = 0; i < p.size(); ++i) {
                          T d = T(0);
                          if (p[i] > clamp) d -= target[i] / p[i];
                          if (T(1) - p[i] > clamp) d += (T(1) - target[i]) / (T(1) - p[i]);
                          gp[i] = gv * d * inv_n;
                        }
                        t.accumulate_grad(pred, gp);
                      });
}

}  // namespace ffdconv
