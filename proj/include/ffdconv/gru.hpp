#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ffdconv/autograd.hpp"
#include "ffdconv/errors.hpp"
#include "ffdconv/ops.hpp"
#include "ffdconv/rng.hpp"
#include "ffdconv/tensor.hpp"

namespace ffdconv {

// Gated recurrent unit with the update convention
//   z_t = sigmoid(Wz x_t + Uz h_{t-1} + bz)
//   r_t = sigmoid(Wr x_t + Ur h_{t-1} + br)
//   g_t = tanh(Wh x_t + Uh (r_t * h_{t-1}) + bh)
//   h_t = (1 - z_t) * h_{t-1} + z_t * g_t
// so z_t = 0 holds the previous state and z_t = 1 takes the candidate.

struct GruVars {
  Var wz, wr, wh;  // input projections [H, N]
  Var uz, ur, uh;  // recurrent projections [H, H]
  Var bz, br, bh;  // gate biases [H]
};

template <typename T>
struct GruCell {
  std::size_t input_dim = 0;
  std::size_t hidden = 0;
  Parameter<T>*wz = nullptr, *wr = nullptr, *wh = nullptr;
  Parameter<T>*uz = nullptr, *ur = nullptr, *uh = nullptr;
  Parameter<T>*bz = nullptr, *br = nullptr, *bh = nullptr;
};

template <typename T>
GruCell<T> make_gru_cell(ParamStore<T>& store, const std::string& prefix, std::size_t input_dim,
                         std::size_t hidden, Rng& rng) {
  if (input_dim == 0 || hidden == 0) {
    throw ConfigError("gru cell needs nonzero input_dim and hidden");
  }
  GruCell<T> cell;
  cell.input_dim = input_dim;
  cell.hidden = hidden;
  auto init = [&](std::size_t rows, std::size_t cols) {
    Tensor<T> w({rows, cols});
    const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cols)));
    w.fill_uniform(rng, -bound, bound);
    return w;
  };
  cell.wz = &store.add(prefix + ".wz", init(hidden, input_dim));
  cell.wr = &store.add(prefix + ".wr", init(hidden, input_dim));
  cell.wh = &store.add(prefix + ".wh", init(hidden, input_dim));
  cell.uz = &store.add(prefix + ".uz", init(hidden, hidden));
  cell.ur = &store.add(prefix + ".ur", init(hidden, hidden));
  cell.uh = &store.add(prefix + ".uh", init(hidden, hidden));
  cell.bz = &store.add(prefix + ".bz", Tensor<T>::zeros({hidden}));
  cell.br = &store.add(prefix + ".br", Tensor<T>::zeros({hidden}));
  cell.bh = &store.add(prefix + ".bh", Tensor<T>::zeros({hidden}));
  return cell;
}

template <typename T>
GruVars bind_gru(Tape<T>& tape, const GruCell<T>& cell) {
  return GruVars{tape.parameter(*cell.wz), tape.parameter(*cell.wr), tape.parameter(*cell.wh),
                 tape.parameter(*cell.uz), tape.parameter(*cell.ur), tape.parameter(*cell.uh),
                 tape.parameter(*cell.bz), tape.parameter(*cell.br), tape.parameter(*cell.bh)};
}

// Runs the recurrence over x [B, T, N] and returns [B, T, H]. With
// reverse=true the scan goes from the last frame to the first, and each h_t is
// still written at position t. Input projections for all frames are computed
// as three batched matmuls before the scan.
template <typename T>
Var gru_forward(Tape<T>& tape, const GruVars& g, Var x, bool reverse = false) {
  const Tensor<T>& xv = tape.value(x);
  if (xv.rank() != 3) {
    throw ShapeError("gru_forward: expected [B,T,N], got " + shape_str(xv.shape()));
  }
  const std::size_t batch = xv.dim(0), frames = xv.dim(1), in_dim = xv.dim(2);
  const std::size_t hidden = tape.value(g.wz).dim(0);
  if (tape.value(g.wz).dim(1) != in_dim) {
    throw ShapeError("gru_forward: weight expects input dim " +
                     std::to_string(tape.value(g.wz).dim(1)) + ", got " + std::to_string(in_dim));
  }

  Var flat = reshape(tape, x, {batch * frames, in_dim});
  auto hoist = [&](Var w, Var b) {
    return reshape(tape, linear(tape, flat, w, b), {batch, frames, hidden});
  };
  Var px_z = hoist(g.wz, g.bz);
  Var px_r = hoist(g.wr, g.br);
  Var px_h = hoist(g.wh, g.bh);
  auto at = [&](Var proj, std::size_t t) {
    return reshape(tape, slice(tape, proj, 1, t, 1), {batch, hidden});
  };

  Var h = tape.constant(Tensor<T>::zeros({batch, hidden}));
  std::vector<Var> outputs(frames);
  for (std::size_t step = 0; step < frames; ++step) {
    const std::size_t t = reverse ? frames - 1 - step : step;
    Var z = sigmoid(tape, add(tape, at(px_z, t), linear(tape, h, g.uz)));
    Var r = sigmoid(tape, add(tape, at(px_r, t), linear(tape, h, g.ur)));
    Var cand = tanh_act(tape, add(tape, at(px_h, t), linear(tape, mul(tape, r, h), g.uh)));
    h = add(tape, sub(tape, h, mul(tape, z, h)), mul(tape, z, cand));
    outputs[t] = reshape(tape, h, {batch, 1, hidden});
  }
  return concat(tape, outputs, 1);
}

template <typename T>
Var gru_forward(Tape<T>& tape, const GruCell<T>& cell, Var x, bool reverse = false) {
  return gru_forward(tape, bind_gru(tape, cell), x, reverse);
}

// Bidirectional layer: forward and backward scans concatenated on the feature
// axis, [B, T, 2H].
template <typename T>
Var bigru(Tape<T>& tape, const GruCell<T>& fwd, const GruCell<T>& bwd, Var x) {
  Var a = gru_forward(tape, fwd, x, false);
  Var b = gru_forward(tape, bwd, x, true);
  return concat(tape, std::vector<Var>{a, b}, 2);
}

}  // namespace ffdconv
