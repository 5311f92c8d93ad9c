#pragma once

#include <cstddef>
#include <string>

#include "ffdconv/autograd.hpp"
#include "ffdconv/conv.hpp"
#include "ffdconv/ddf.hpp"
#include "ffdconv/errors.hpp"
#include "ffdconv/filter_gen.hpp"
#include "ffdconv/ops.hpp"
#include "ffdconv/rng.hpp"
#include "ffdconv/tensor.hpp"

namespace ffdconv {

enum class BlockKind { kStatic, kDynamic };
enum class Activation { kRelu, kGlu };

// One convolutional stage. Static blocks run a plain KxK convolution; dynamic
// blocks run a 1x1 channel transform, generate per-position and per-channel
// filters from the transformed tensor, and apply them with the fused
// dynamic-filtering op. Both finish with optional batch norm and an
// activation.
struct BlockConfig {
  BlockKind kind = BlockKind::kStatic;
  DdfAxis axis = DdfAxis::kFreq;  // dynamic: which axis indexes the filter bank
  std::size_t c_in = 1;
  std::size_t c_out = 1;
  std::size_t kernel = 3;  // static conv extent and dynamic filter K
  std::size_t window = 1;  // dynamic: odd receptive extent along the kept axis
  bool use_attention = true;
  double temperature = 1.0;
  std::size_t reduction = 4;  // dynamic: channel-branch bottleneck ratio
  bool use_norm = true;
  Activation act = Activation::kRelu;
  std::size_t frames = 0;  // spatial extents the generators bind to
  std::size_t bands = 0;
};

template <typename T>
struct ConvBlock {
  BlockConfig cfg;

  Parameter<T>* conv_w = nullptr;  // static path
  Parameter<T>* conv_b = nullptr;

  Parameter<T>* trans_w = nullptr;  // dynamic path: 1x1 transform
  Parameter<T>* trans_b = nullptr;
  SpatialGen<T> sgen;
  ChannelGen<T> cgen;

  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;
  Parameter<T>* run_mean = nullptr;  // non-trainable buffers
  Parameter<T>* run_var = nullptr;
  T bn_momentum = T(0.1);

  Parameter<T>* gate_w = nullptr;  // glu gate: 1x1 conv on the normalized tensor
  Parameter<T>* gate_b = nullptr;
};

// Trainable parameter count implied by a config; running statistics are
// buffers and not counted.
inline std::size_t block_param_count(const BlockConfig& cfg) {
  const std::size_t k2 = cfg.kernel * cfg.kernel;
  std::size_t n = 0;
  if (cfg.kind == BlockKind::kStatic) {
    n += cfg.c_in * cfg.c_out * k2 + cfg.c_out;
  } else {
    n += cfg.c_in * cfg.c_out + cfg.c_out;  // 1x1 transform
    std::size_t kt = 1, kf = 1;
    switch (cfg.axis) {
      case DdfAxis::kFreq:
        kt = cfg.frames;
        kf = cfg.window;
        break;
      case DdfAxis::kTime:
        kt = cfg.window;
        kf = cfg.bands;
        break;
      case DdfAxis::kPixel:
        break;
    }
    n += k2 * cfg.c_out * kt * kf + k2 + 1;  // spatial branch + gain
    std::size_t hidden = cfg.c_out / cfg.reduction;
    if (hidden == 0) hidden = 1;
    n += hidden * cfg.c_out + hidden;           // squeeze FC
    n += cfg.c_out * k2 * hidden + cfg.c_out * k2;  // excite FC
    n += 1;                                     // channel gain
  }
  if (cfg.use_norm) n += 2 * cfg.c_out;
  if (cfg.act == Activation::kGlu) n += cfg.c_out * cfg.c_out + cfg.c_out;
  return n;
}

template <typename T>
ConvBlock<T> make_conv_block(ParamStore<T>& store, const std::string& prefix,
                             const BlockConfig& cfg, Rng& rng) {
  if (cfg.c_in == 0 || cfg.c_out == 0) throw ConfigError("block needs nonzero channels");
  if (cfg.kernel % 2 == 0) {
    throw ConfigError("block kernel must be odd, got " + std::to_string(cfg.kernel));
  }
  ConvBlock<T> block;
  block.cfg = cfg;
  const std::size_t k2 = cfg.kernel * cfg.kernel;

  if (cfg.kind == BlockKind::kStatic) {
    Tensor<T> w({cfg.c_out, cfg.c_in, cfg.kernel, cfg.kernel});
    detail::init_fan_in_uniform(w, cfg.c_in * k2, rng);
    block.conv_w = &store.add(prefix + ".conv.weight", std::move(w));
    block.conv_b = &store.add(prefix + ".conv.bias", Tensor<T>::zeros({cfg.c_out}));
  } else {
    if (cfg.frames == 0 || cfg.bands == 0) {
      throw ConfigError("dynamic block needs the frame/band extents it will run at");
    }
    Tensor<T> tw({cfg.c_out, cfg.c_in, 1, 1});
    detail::init_fan_in_uniform(tw, cfg.c_in, rng);
    block.trans_w = &store.add(prefix + ".transform.weight", std::move(tw));
    block.trans_b = &store.add(prefix + ".transform.bias", Tensor<T>::zeros({cfg.c_out}));
    block.sgen = make_spatial_gen(store, prefix + ".sgen", cfg.axis, cfg.c_out, cfg.kernel,
                                  cfg.window, cfg.frames, cfg.bands, rng);
    block.sgen.temperature = cfg.temperature;
    block.sgen.use_attention = cfg.use_attention;
    block.cgen = make_channel_gen(store, prefix + ".cgen", cfg.c_out, cfg.kernel, cfg.reduction,
                                  rng);
  }

  if (cfg.use_norm) {
    block.gamma = &store.add(prefix + ".bn.gamma", Tensor<T>::ones({cfg.c_out}));
    block.beta = &store.add(prefix + ".bn.beta", Tensor<T>::zeros({cfg.c_out}));
    block.run_mean =
        &store.add(prefix + ".bn.running_mean", Tensor<T>::zeros({cfg.c_out}), false);
    block.run_var = &store.add(prefix + ".bn.running_var", Tensor<T>::ones({cfg.c_out}), false);
  }
  if (cfg.act == Activation::kGlu) {
    Tensor<T> gw({cfg.c_out, cfg.c_out, 1, 1});
    detail::init_fan_in_uniform(gw, cfg.c_out, rng);
    block.gate_w = &store.add(prefix + ".gate.weight", std::move(gw));
    block.gate_b = &store.add(prefix + ".gate.bias", Tensor<T>::zeros({cfg.c_out}));
  }
  return block;
}

// Pre-normalization output: the static convolution or the dynamic-filtering
// result, before batch norm and activation.
template <typename T>
Var block_features(Tape<T>& tape, ConvBlock<T>& block, Var x) {
  const BlockConfig& cfg = block.cfg;
  if (cfg.kind == BlockKind::kStatic) {
    const std::size_t half = (cfg.kernel - 1) / 2;
    return conv2d(tape, x, tape.parameter(*block.conv_w), tape.parameter(*block.conv_b), half,
                  half);
  }
  Var t = conv2d(tape, x, tape.parameter(*block.trans_w), tape.parameter(*block.trans_b), 0, 0);
  Var sfil = gen_spatial_filters(tape, block.sgen, t);
  Var cfil = gen_channel_filters(tape, block.cgen, t);
  return ddf(tape, t, sfil, cfil, cfg.axis);
}

template <typename T>
Var block_forward(Tape<T>& tape, ConvBlock<T>& block, Var x, bool training) {
  const BlockConfig& cfg = block.cfg;
  Var h = block_features(tape, block, x);
  if (cfg.use_norm) {
    h = batch_norm(tape, h, tape.parameter(*block.gamma), tape.parameter(*block.beta),
                   block.run_mean->value, block.run_var->value, block.bn_momentum, training,
                   /*update_stats=*/training);
  }
  switch (cfg.act) {
    case Activation::kRelu:
      return relu(tape, h);
    case Activation::kGlu: {
      Var gate =
          conv2d(tape, h, tape.parameter(*block.gate_w), tape.parameter(*block.gate_b), 0, 0);
      return mul(tape, h, sigmoid(tape, gate));
    }
  }
  throw ConfigError("block_forward: bad activation");
}

}  // namespace ffdconv
