#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "ffdconv/autograd.hpp"
#include "ffdconv/errors.hpp"
#include "ffdconv/parallel.hpp"
#include "ffdconv/tensor.hpp"

namespace ffdconv {

namespace kernels {

// Direct 2-d convolution (cross-correlation), stride 1, explicit zero padding.
//   x [B,Cin,T,F], w [Cout,Cin,Kt,Kf], bias [Cout] or empty
//   out [B,Cout, T+2*pad_t-Kt+1, F+2*pad_f-Kf+1]
// Inner loops run saxpy-style over output rows; out-of-range taps are excluded
// up front so the hot loop is branch-free.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const T* bias, std::size_t pad_t,
                         std::size_t pad_f) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw ShapeError("conv2d: expected x [B,Cin,T,F] and w [Cout,Cin,Kt,Kf], got " +
                     shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  std::size_t B = x.dim(0), Cin = x.dim(1), Tt = x.dim(2), F = x.dim(3);
  std::size_t Cout = w.dim(0), Kt = w.dim(2), Kf = w.dim(3);
  if (w.dim(1) != Cin) {
    throw ShapeError("conv2d: weight expects " + std::to_string(w.dim(1)) +
                     " input channels, input has " + std::to_string(Cin));
  }
  if (Tt + 2 * pad_t < Kt || F + 2 * pad_f < Kf) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  std::size_t To = Tt + 2 * pad_t - Kt + 1;
  std::size_t Fo = F + 2 * pad_f - Kf + 1;
  Tensor<T> out({B, Cout, To, Fo});
  const std::ptrdiff_t pt = static_cast<std::ptrdiff_t>(pad_t);
  const std::ptrdiff_t pf = static_cast<std::ptrdiff_t>(pad_f);
  parallel::parallel_for(B * Cout, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t bc = lo; bc < hi; ++bc) {
      std::size_t b = bc / Cout, oc = bc % Cout;
      for (std::size_t ot = 0; ot < To; ++ot) {
        T* orow = out.data() + ((b * Cout + oc) * To + ot) * Fo;
        T init = bias ? bias[oc] : T(0);
        for (std::size_t of = 0; of < Fo; ++of) orow[of] = init;
        for (std::size_t ic = 0; ic < Cin; ++ic) {
          for (std::size_t kt = 0; kt < Kt; ++kt) {
            std::ptrdiff_t it = static_cast<std::ptrdiff_t>(ot + kt) - pt;
            if (it < 0 || it >= static_cast<std::ptrdiff_t>(Tt)) continue;
            const T* xrow = x.data() + ((b * Cin + ic) * Tt + it) * F;
            const T* wrow = w.data() + ((oc * Cin + ic) * Kt + kt) * Kf;
            for (std::size_t kf = 0; kf < Kf; ++kf) {
              T wv = wrow[kf];
              if (wv == T(0)) continue;
              std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kf) - pf;
              std::size_t of_lo = off < 0 ? static_cast<std::size_t>(-off) : 0;
              std::size_t of_hi = std::min<std::ptrdiff_t>(
                  static_cast<std::ptrdiff_t>(Fo), static_cast<std::ptrdiff_t>(F) - off);
              const T* xp = xrow + off;
              for (std::size_t of = of_lo; of < of_hi; ++of) orow[of] += wv * xp[of];
            }
          }
        }
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, std::nullptr_t, std::size_t pad_t,
                         std::size_t pad_f) {
  return conv2d_forward(x, w, static_cast<const T*>(nullptr), pad_t, pad_f);
}

// Gradient w.r.t. the input. Disjoint writes per batch element.
template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& g, const Tensor<T>& w, const Shape& x_shape,
                                std::size_t pad_t, std::size_t pad_f) {
  std::size_t B = x_shape[0], Cin = x_shape[1], Tt = x_shape[2], F = x_shape[3];
  std::size_t Cout = w.dim(0), Kt = w.dim(2), Kf = w.dim(3);
  std::size_t To = g.dim(2), Fo = g.dim(3);
  Tensor<T> gx = Tensor<T>::zeros(x_shape);
  const std::ptrdiff_t pt = static_cast<std::ptrdiff_t>(pad_t);
  const std::ptrdiff_t pf = static_cast<std::ptrdiff_t>(pad_f);
  parallel::parallel_for(
      B,
      [&](std::size_t blo, std::size_t bhi) {
        for (std::size_t b = blo; b < bhi; ++b) {
          for (std::size_t oc = 0; oc < Cout; ++oc) {
            for (std::size_t ot = 0; ot < To; ++ot) {
              const T* grow = g.data() + ((b * Cout + oc) * To + ot) * Fo;
              for (std::size_t ic = 0; ic < Cin; ++ic) {
                for (std::size_t kt = 0; kt < Kt; ++kt) {
                  std::ptrdiff_t it = static_cast<std::ptrdiff_t>(ot + kt) - pt;
                  if (it < 0 || it >= static_cast<std::ptrdiff_t>(Tt)) continue;
                  T* gxrow = gx.data() + ((b * Cin + ic) * Tt + it) * F;
                  const T* wrow = w.data() + ((oc * Cin + ic) * Kt + kt) * Kf;
                  for (std::size_t kf = 0; kf < Kf; ++kf) {
                    T wv = wrow[kf];
                    if (wv == T(0)) continue;
                    std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kf) - pf;
                    std::size_t of_lo = off < 0 ? static_cast<std::size_t>(-off) : 0;
                    std::size_t of_hi = std::min<std::ptrdiff_t>(
                        static_cast<std::ptrdiff_t>(Fo), static_cast<std::ptrdiff_t>(F) - off);
                    T* gxp = gxrow + off;
                    for (std::size_t of = of_lo; of < of_hi; ++of) gxp[of] += wv * grow[of];
                  }
                }
              }
            }
          }
        }
      },
      1);
  return gx;
}

// Gradient w.r.t. the weights. Disjoint writes per output channel.
template <typename T>
Tensor<T> conv2d_backward_weight(const Tensor<T>& g, const Tensor<T>& x, const Shape& w_shape,
                                 std::size_t pad_t, std::size_t pad_f) {
  std::size_t B = x.dim(0), Cin = x.dim(1), Tt = x.dim(2), F = x.dim(3);
  std::size_t Cout = w_shape[0], Kt = w_shape[2], Kf = w_shape[3];
  std::size_t To = g.dim(2), Fo = g.dim(3);
  Tensor<T> gw = Tensor<T>::zeros(w_shape);
  const std::ptrdiff_t pt = static_cast<std::ptrdiff_t>(pad_t);
  const std::ptrdiff_t pf = static_cast<std::ptrdiff_t>(pad_f);
  parallel::parallel_for(
      Cout,
      [&](std::size_t clo, std::size_t chi) {
        for (std::size_t oc = clo; oc < chi; ++oc) {
          for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t ot = 0; ot < To; ++ot) {
              const T* grow = g.data() + ((b * Cout + oc) * To + ot) * Fo;
              for (std::size_t ic = 0; ic < Cin; ++ic) {
                for (std::size_t kt = 0; kt < Kt; ++kt) {
                  std::ptrdiff_t it = static_cast<std::ptrdiff_t>(ot + kt) - pt;
                  if (it < 0 || it >= static_cast<std::ptrdiff_t>(Tt)) continue;
                  const T* xrow = x.data() + ((b * Cin + ic) * Tt + it) * F;
                  T* gwrow = gw.data() + ((oc * Cin + ic) * Kt + kt) * Kf;
                  for (std::size_t kf = 0; kf < Kf; ++kf) {
                    std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kf) - pf;
                    std::size_t of_lo = off < 0 ? static_cast<std::size_t>(-off) : 0;
                    std::size_t of_hi = std::min<std::ptrdiff_t>(
                        static_cast<std::ptrdiff_t>(Fo), static_cast<std::ptrdiff_t>(F) - off);
                    const T* xp = xrow + off;
                    T acc = T(0);
                    for (std::size_t of = of_lo; of < of_hi; ++of) acc += grow[of] * xp[of];
                    gwrow[kf] += acc;
                  }
                }
              }
            }
          }
        }
      },
      1);
  return gw;
}

}  // namespace kernels

// Tape op: 2-d convolution, stride 1, zero padding (pad_t, pad_f).
template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var w, Var bias, std::size_t pad_t, std::size_t pad_f) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(w);
  const T* bp = nullptr;
  if (bias.valid()) {
    const Tensor<T>& bv = tape.value(bias);
    if (bv.size() != wv.dim(0)) {
      throw ShapeError("conv2d: bias has " + std::to_string(bv.size()) + " entries, want " +
                       std::to_string(wv.dim(0)));
    }
    bp = bv.data();
  }
  Tensor<T> out = kernels::conv2d_forward(xv, wv, bp, pad_t, pad_f);
  std::vector<Var> ins = {x, w};
  if (bias.valid()) ins.push_back(bias);
  Shape xs = xv.shape(), ws = wv.shape();
  return tape.emplace(
      "conv2d", std::move(ins), std::move(out),
      [x, w, bias, pad_t, pad_f, xs, ws](Tape<T>& t, std::size_t id) {
        const Tensor<T>& g = t.mutable_node(id).grad;
        if (t.needs_grad(x)) {
          t.accumulate_grad(x, kernels::conv2d_backward_input(g, t.value(w), xs, pad_t, pad_f));
        }
        if (t.needs_grad(w)) {
          t.accumulate_grad(w, kernels::conv2d_backward_weight(g, t.value(x), ws, pad_t, pad_f));
        }
        if (bias.valid() && t.needs_grad(bias)) {
          std::size_t Cout = g.dim(1), B = g.dim(0), plane = g.dim(2) * g.dim(3);
          Tensor<T>& gb = t.grad_buffer(bias);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t oc = 0; oc < Cout; ++oc) {
              const T* p = g.data() + (b * Cout + oc) * plane;
              T acc = T(0);
              for (std::size_t i = 0; i < plane; ++i) acc += p[i];
              gb[oc] += acc;
            }
        }
      });
}

// Same-size convolution for odd kernels.
template <typename T>
Var conv2d_same(Tape<T>& tape, Var x, Var w, Var bias = Var{}) {
  const Tensor<T>& wv = tape.value(w);
  std::size_t Kt = wv.dim(2), Kf = wv.dim(3);
  if (Kt % 2 == 0 || Kf % 2 == 0) {
    throw ShapeError("conv2d_same: kernel extents must be odd, got " + shape_str(wv.shape()));
  }
  return conv2d(tape, x, w, bias, (Kt - 1) / 2, (Kf - 1) / 2);
}

}  // namespace ffdconv
