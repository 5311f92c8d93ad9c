#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ffdconv/autograd.hpp"
#include "ffdconv/conv.hpp"
#include "ffdconv/ddf.hpp"
#include "ffdconv/errors.hpp"
#include "ffdconv/ops.hpp"
#include "ffdconv/rng.hpp"
#include "ffdconv/tensor.hpp"

namespace ffdconv {

// ---- shared filter post-processing ------------------------------------------

// Softmax over the trailing tap axis with temperature: rows of x are divided
// by tau before normalizing. Large tau flattens rows toward uniform.
template <typename T>
Var attention_constrain(Tape<T>& tape, Var logits, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw ConfigError("attention temperature must be positive and finite, got " +
                      std::to_string(tau));
  }
  const std::size_t last = tape.value(logits).rank() - 1;
  Var scaled = scale(tape, logits, static_cast<T>(1.0 / tau));
  return softmax(tape, scaled, last);
}

// Standardizes each row over the trailing tap axis, then multiplies by a
// single learned scalar gain. Constant rows map to zeros.
template <typename T>
Var filter_norm(Tape<T>& tape, Var filters, Var gain, T eps = T(1e-5)) {
  if (tape.value(gain).size() != 1) {
    throw ShapeError("filter_norm: gain must hold one value, got " +
                     shape_str(tape.value(gain).shape()));
  }
  Var standardized = row_standardize(tape, filters, eps);
  return mul(tape, standardized, gain);
}

namespace detail {

inline std::size_t taps_to_kernel(std::size_t taps, const char* what) {
  auto k = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(taps))));
  if (k * k != taps || k % 2 == 0) {
    throw ShapeError(std::string(what) + ": tap count " + std::to_string(taps) +
                     " is not an odd square");
  }
  return k;
}

template <typename T>
void init_fan_in_uniform(Tensor<T>& w, std::size_t fan_in, Rng& rng) {
  const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in)));
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = static_cast<T>(rng.uniform(-bound, bound));
  }
}

}  // namespace detail

// ---- spatial branch -----------------------------------------------------------
//
// A convolution slides along the kept spatial axis and spans the other axis
// entirely, producing K*K logits per kept position:
//   freq axis:  weight [K^2, C, T, W]  -> conv -> [B, K^2, 1, F] -> [B, F,   K^2]
//   time axis:  weight [K^2, C, W, F]  -> conv -> [B, K^2, T, 1] -> [B, T,   K^2]
//   pixel axis: weight [K^2, C, 1, 1]  -> conv -> [B, K^2, T, F] -> [B, T*F, K^2]
// W is the odd receptive window along the kept axis.

// Raw per-position tap logits [B, L, K^2] before attention and normalization.
template <typename T>
Var spatial_filter_logits(Tape<T>& tape, Var x, Var weight, Var bias, DdfAxis axis) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(weight);
  if (xv.rank() != 4 || wv.rank() != 4) {
    throw ShapeError("spatial_filter_logits: expected [B,C,T,F] input and rank-4 weight, got " +
                     shape_str(xv.shape()) + " and " + shape_str(wv.shape()));
  }
  const std::size_t batch = xv.dim(0);
  const std::size_t frames = xv.dim(2);
  const std::size_t bands = xv.dim(3);
  const std::size_t taps = wv.dim(0);
  detail::taps_to_kernel(taps, "spatial_filter_logits");

  std::size_t pad_t = 0, pad_f = 0;
  std::size_t window = 1;
  switch (axis) {
    case DdfAxis::kFreq:
      if (wv.dim(2) != frames) {
        throw ShapeError("spatial_filter_logits: freq-axis weight must span all " +
                         std::to_string(frames) + " frames, got " + shape_str(wv.shape()));
      }
      window = wv.dim(3);
      pad_f = (window - 1) / 2;
      break;
    case DdfAxis::kTime:
      if (wv.dim(3) != bands) {
        throw ShapeError("spatial_filter_logits: time-axis weight must span all " +
                         std::to_string(bands) + " bands, got " + shape_str(wv.shape()));
      }
      window = wv.dim(2);
      pad_t = (window - 1) / 2;
      break;
    case DdfAxis::kPixel:
      if (wv.dim(2) != 1 || wv.dim(3) != 1) {
        throw ShapeError("spatial_filter_logits: pixel-axis weight must be 1x1, got " +
                         shape_str(wv.shape()));
      }
      break;
  }
  if (window % 2 == 0) {
    throw ShapeError("spatial_filter_logits: window extent must be odd, got " +
                     std::to_string(window));
  }

  Var conv = conv2d(tape, x, weight, bias, pad_t, pad_f);
  std::size_t positions = 0;
  switch (axis) {
    case DdfAxis::kFreq:
      positions = bands;
      break;
    case DdfAxis::kTime:
      positions = frames;
      break;
    case DdfAxis::kPixel:
      positions = frames * bands;
      break;
  }
  Var flat = reshape(tape, conv, {batch, taps, positions});
  return permute(tape, flat, {0, 2, 1});
}

// Full spatial branch: logits -> optional attention constraint -> Filter-Norm.
template <typename T>
Var spatial_filters(Tape<T>& tape, Var x, Var weight, Var bias, DdfAxis axis, bool use_attention,
                    double tau, Var gain) {
  Var filters = spatial_filter_logits(tape, x, weight, bias, axis);
  if (use_attention) filters = attention_constrain(tape, filters, tau);
  return filter_norm(tape, filters, gain);
}

template <typename T>
struct SpatialGen {
  DdfAxis axis = DdfAxis::kFreq;
  std::size_t channels = 0;  // channels of the tensor the filters are generated from
  std::size_t kernel = 3;    // K of the dynamic K x K filters
  std::size_t window = 1;    // receptive extent W along the kept axis (odd)
  std::size_t frames = 0;    // T the generator is built for
  std::size_t bands = 0;     // F the generator is built for
  double temperature = 1.0;
  bool use_attention = true;

  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;
  Parameter<T>* gain = nullptr;
};

template <typename T>
SpatialGen<T> make_spatial_gen(ParamStore<T>& store, const std::string& prefix, DdfAxis axis,
                               std::size_t channels, std::size_t kernel, std::size_t window,
                               std::size_t frames, std::size_t bands, Rng& rng) {
  if (kernel % 2 == 0 || kernel == 0) {
    throw ConfigError("spatial generator kernel must be odd, got " + std::to_string(kernel));
  }
  if (window % 2 == 0 || window == 0) {
    throw ConfigError("spatial generator window must be odd, got " + std::to_string(window));
  }
  if (channels == 0 || frames == 0 || bands == 0) {
    throw ConfigError("spatial generator needs nonzero channels/frames/bands");
  }
  SpatialGen<T> gen;
  gen.axis = axis;
  gen.channels = channels;
  gen.kernel = kernel;
  gen.window = window;
  gen.frames = frames;
  gen.bands = bands;

  std::size_t kt = 1, kf = 1;
  switch (axis) {
    case DdfAxis::kFreq:
      kt = frames;
      kf = window;
      break;
    case DdfAxis::kTime:
      kt = window;
      kf = bands;
      break;
    case DdfAxis::kPixel:
      break;
  }
  const std::size_t taps = kernel * kernel;
  Tensor<T> w({taps, channels, kt, kf});
  detail::init_fan_in_uniform(w, channels * kt * kf, rng);
  gen.weight = &store.add(prefix + ".weight", std::move(w));
  gen.bias = &store.add(prefix + ".bias", Tensor<T>::zeros({taps}));
  gen.gain = &store.add(prefix + ".gain", Tensor<T>::full({1}, T(1)));
  return gen;
}

template <typename T>
Var gen_spatial_filters(Tape<T>& tape, const SpatialGen<T>& gen, Var x) {
  const Tensor<T>& xv = tape.value(x);
  if (xv.rank() != 4 || xv.dim(1) != gen.channels || xv.dim(2) != gen.frames ||
      xv.dim(3) != gen.bands) {
    throw ShapeError("gen_spatial_filters: input " + shape_str(xv.shape()) +
                     " does not match generator built for [B," + std::to_string(gen.channels) +
                     "," + std::to_string(gen.frames) + "," + std::to_string(gen.bands) + "]");
  }
  return spatial_filters(tape, x, tape.parameter(*gen.weight), tape.parameter(*gen.bias), gen.axis,
                         gen.use_attention, gen.temperature, tape.parameter(*gen.gain));
}

// ---- channel branch -----------------------------------------------------------
//
// Squeeze-and-excitation shaped bottleneck over globally pooled features:
//   [B,C,T,F] -> GAP -> [B,C] -> FC(C -> C/r) -> ReLU -> FC(C/r -> C*K^2)
//   -> [B, C, K^2] -> Filter-Norm

template <typename T>
Var channel_filters(Tape<T>& tape, Var x, Var w1, Var b1, Var w2, Var b2, Var gain) {
  const Tensor<T>& xv = tape.value(x);
  if (xv.rank() != 4) {
    throw ShapeError("channel_filters: expected [B,C,T,F], got " + shape_str(xv.shape()));
  }
  const std::size_t batch = xv.dim(0);
  const std::size_t channels = xv.dim(1);
  const std::size_t out_dim = tape.value(w2).dim(0);
  if (out_dim % channels != 0) {
    throw ShapeError("channel_filters: FC output " + std::to_string(out_dim) +
                     " is not a multiple of " + std::to_string(channels) + " channels");
  }
  const std::size_t taps = out_dim / channels;
  detail::taps_to_kernel(taps, "channel_filters");

  Var pooled = global_avg_pool(tape, x);  // [B, C, 1, 1]
  Var squeezed = reshape(tape, pooled, {batch, channels});
  Var h = relu(tape, linear(tape, squeezed, w1, b1));
  Var out = linear(tape, h, w2, b2);
  Var filters = reshape(tape, out, {batch, channels, taps});
  return filter_norm(tape, filters, gain);
}

template <typename T>
struct ChannelGen {
  std::size_t channels = 0;
  std::size_t kernel = 3;
  std::size_t reduction = 4;

  Parameter<T>* w1 = nullptr;
  Parameter<T>* b1 = nullptr;
  Parameter<T>* w2 = nullptr;
  Parameter<T>* b2 = nullptr;
  Parameter<T>* gain = nullptr;
};

template <typename T>
ChannelGen<T> make_channel_gen(ParamStore<T>& store, const std::string& prefix,
                               std::size_t channels, std::size_t kernel, std::size_t reduction,
                               Rng& rng) {
  if (kernel % 2 == 0 || kernel == 0) {
    throw ConfigError("channel generator kernel must be odd, got " + std::to_string(kernel));
  }
  if (reduction == 0 || channels == 0) {
    throw ConfigError("channel generator needs nonzero channels and reduction");
  }
  std::size_t hidden = channels / reduction;
  if (hidden == 0) hidden = 1;

  ChannelGen<T> gen;
  gen.channels = channels;
  gen.kernel = kernel;
  gen.reduction = reduction;

  const std::size_t taps = kernel * kernel;
  Tensor<T> w1({hidden, channels});
  detail::init_fan_in_uniform(w1, channels, rng);
  Tensor<T> w2({channels * taps, hidden});
  detail::init_fan_in_uniform(w2, hidden, rng);
  gen.w1 = &store.add(prefix + ".w1", std::move(w1));
  gen.b1 = &store.add(prefix + ".b1", Tensor<T>::zeros({hidden}));
  gen.w2 = &store.add(prefix + ".w2", std::move(w2));
  gen.b2 = &store.add(prefix + ".b2", Tensor<T>::zeros({channels * taps}));
  gen.gain = &store.add(prefix + ".gain", Tensor<T>::full({1}, T(1)));
  return gen;
}

template <typename T>
Var gen_channel_filters(Tape<T>& tape, const ChannelGen<T>& gen, Var x) {
  const Tensor<T>& xv = tape.value(x);
  if (xv.rank() != 4 || xv.dim(1) != gen.channels) {
    throw ShapeError("gen_channel_filters: expected [B," + std::to_string(gen.channels) +
                     ",T,F], got " + shape_str(xv.shape()));
  }
  return channel_filters(tape, x, tape.parameter(*gen.w1), tape.parameter(*gen.b1),
                         tape.parameter(*gen.w2), tape.parameter(*gen.b2),
                         tape.parameter(*gen.gain));
}

}  // namespace ffdconv
