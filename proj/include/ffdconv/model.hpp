#pragma once

#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "ffdconv/autograd.hpp"
#include "ffdconv/blocks.hpp"
#include "ffdconv/errors.hpp"
#include "ffdconv/gru.hpp"
#include "ffdconv/io.hpp"
#include "ffdconv/ops.hpp"
#include "ffdconv/rng.hpp"
#include "ffdconv/tensor.hpp"

namespace ffdconv {

// Convolutional-recurrent sound event detector:
//   conv stack (first block static, later blocks per variant) with per-layer
//   avg pooling -> frequency collapse by mean -> stacked bidirectional GRUs
//   -> per-frame strong head and attention-pooled weak head.

struct ModelConfig {
  std::string variant = "ffd";  // ffd | ftd | ddf | static
  std::size_t n_classes = 4;
  std::size_t frames = 626;  // input feature frames
  std::size_t bands = 128;   // input mel bands
  std::vector<std::size_t> channels = {16, 32, 64, 128, 128, 128, 128};
  std::vector<std::size_t> time_pool = {2, 2, 1, 1, 1, 1, 1};
  std::vector<std::size_t> freq_pool = {2, 2, 2, 2, 2, 2, 2};
  std::size_t kernel = 3;
  std::size_t window = 3;  // receptive extent of the spatial generators
  bool use_attention = true;
  double temperature = 1.0;
  std::size_t reduction = 4;
  bool use_norm = true;
  Activation act = Activation::kRelu;
  std::size_t gru_hidden = 128;
  std::size_t gru_layers = 2;
};

inline DdfAxis variant_axis(const std::string& variant) {
  if (variant == "ffd") return DdfAxis::kFreq;
  if (variant == "ftd") return DdfAxis::kTime;
  if (variant == "ddf") return DdfAxis::kPixel;
  throw ConfigError("unknown variant: " + variant + " (expected ffd|ftd|ddf|static)");
}

inline bool variant_is_dynamic(const std::string& variant) {
  if (variant == "static") return false;
  variant_axis(variant);  // validates
  return true;
}

// Frame/band extents entering each block, given the pooling schedule.
inline void stack_extents(const ModelConfig& cfg, std::vector<std::size_t>& frames_in,
                          std::vector<std::size_t>& bands_in) {
  const std::size_t L = cfg.channels.size();
  if (cfg.time_pool.size() != L || cfg.freq_pool.size() != L) {
    throw ConfigError("model pooling schedules must match the number of conv layers");
  }
  frames_in.resize(L);
  bands_in.resize(L);
  std::size_t t = cfg.frames, f = cfg.bands;
  for (std::size_t i = 0; i < L; ++i) {
    if (t == 0 || f == 0) throw ConfigError("model pooling collapses the input to nothing");
    frames_in[i] = t;
    bands_in[i] = f;
    const std::size_t tp = cfg.time_pool[i] ? cfg.time_pool[i] : 1;
    const std::size_t fp = cfg.freq_pool[i] ? cfg.freq_pool[i] : 1;
    if (tp > t || fp > f) {
      throw ConfigError("model pooling at layer " + std::to_string(i + 1) +
                        " exceeds the remaining extents");
    }
    t = (t - tp) / tp + 1;
    f = (f - fp) / fp + 1;
  }
  frames_in.push_back(t);  // extents after the last pool
  bands_in.push_back(f);
}

inline std::size_t model_output_frames(const ModelConfig& cfg) {
  std::vector<std::size_t> fr, ba;
  stack_extents(cfg, fr, ba);
  return fr.back();
}

template <typename T>
struct SedModel {
  ModelConfig cfg;
  ParamStore<T> store;
  std::vector<ConvBlock<T>> blocks;
  std::vector<GruCell<T>> gru_fwd, gru_bwd;
  Parameter<T>* strong_w = nullptr;
  Parameter<T>* strong_b = nullptr;
  Parameter<T>* att_w = nullptr;
  Parameter<T>* att_b = nullptr;

  SedModel() = default;
  SedModel(const SedModel&) = delete;
  SedModel& operator=(const SedModel&) = delete;
  SedModel(SedModel&&) = default;
  SedModel& operator=(SedModel&&) = default;

  void set_temperature(double tau) {
    for (auto& b : blocks)
      if (b.cfg.kind == BlockKind::kDynamic) b.sgen.temperature = tau;
  }
};

template <typename T>
SedModel<T> make_sed_model(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.channels.empty()) throw ConfigError("model needs at least one conv layer");
  if (cfg.n_classes == 0) throw ConfigError("model needs at least one class");
  const bool dynamic = variant_is_dynamic(cfg.variant);

  SedModel<T> model;
  model.cfg = cfg;
  Rng rng(Rng::mix(seed, 0x6d6f64656c));

  std::vector<std::size_t> frames_in, bands_in;
  stack_extents(cfg, frames_in, bands_in);

  std::size_t c_in = 1;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    BlockConfig bc;
    bc.kind = (i == 0 || !dynamic) ? BlockKind::kStatic : BlockKind::kDynamic;
    if (dynamic) bc.axis = variant_axis(cfg.variant);
    bc.c_in = c_in;
    bc.c_out = cfg.channels[i];
    bc.kernel = cfg.kernel;
    bc.window = cfg.window;
    bc.use_attention = cfg.use_attention;
    bc.temperature = cfg.temperature;
    bc.reduction = cfg.reduction;
    bc.use_norm = cfg.use_norm;
    bc.act = cfg.act;
    bc.frames = frames_in[i];
    bc.bands = bands_in[i];
    model.blocks.push_back(
        make_conv_block(model.store, "conv" + std::to_string(i + 1), bc, rng));
    c_in = cfg.channels[i];
  }

  std::size_t gru_in = cfg.channels.back();
  for (std::size_t i = 0; i < cfg.gru_layers; ++i) {
    const std::string tag = "gru" + std::to_string(i + 1);
    model.gru_fwd.push_back(make_gru_cell(model.store, tag + ".fwd", gru_in, cfg.gru_hidden, rng));
    model.gru_bwd.push_back(make_gru_cell(model.store, tag + ".bwd", gru_in, cfg.gru_hidden, rng));
    gru_in = 2 * cfg.gru_hidden;
  }

  const std::size_t head_in = cfg.gru_layers > 0 ? 2 * cfg.gru_hidden : cfg.channels.back();
  Tensor<T> sw({cfg.n_classes, head_in});
  detail::init_fan_in_uniform(sw, head_in, rng);
  model.strong_w = &model.store.add("head.strong.weight", std::move(sw));
  model.strong_b = &model.store.add("head.strong.bias", Tensor<T>::zeros({cfg.n_classes}));
  Tensor<T> aw({cfg.n_classes, head_in});
  detail::init_fan_in_uniform(aw, head_in, rng);
  model.att_w = &model.store.add("head.att.weight", std::move(aw));
  model.att_b = &model.store.add("head.att.bias", Tensor<T>::zeros({cfg.n_classes}));
  return model;
}

template <typename T>
struct ModelOutput {
  Var strong;  // [B, T', n_classes] frame-level probabilities
  Var weak;    // [B, n_classes] attention-pooled clip probabilities
  std::vector<std::pair<std::string, Var>> taps;  // per-stage activations
};

// x: [B, 1, frames, bands].
template <typename T>
ModelOutput<T> model_forward(Tape<T>& tape, SedModel<T>& model, Var x, bool training,
                             bool collect_taps = false) {
  const ModelConfig& cfg = model.cfg;
  const Tensor<T>& xv = tape.value(x);
  if (xv.rank() != 4 || xv.dim(1) != 1 || xv.dim(2) != cfg.frames || xv.dim(3) != cfg.bands) {
    throw ShapeError("model_forward: expected [B,1," + std::to_string(cfg.frames) + "," +
                     std::to_string(cfg.bands) + "], got " + shape_str(xv.shape()));
  }
  const std::size_t batch = xv.dim(0);

  ModelOutput<T> out;
  Var h = x;
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    h = block_forward(tape, model.blocks[i], h, training);
    const std::size_t tp = cfg.time_pool[i], fp = cfg.freq_pool[i];
    if (tp > 1 || fp > 1) {
      h = pool2d(tape, h, PoolMode::kAvg, std::max<std::size_t>(tp, 1),
                 std::max<std::size_t>(fp, 1));
    }
    if (collect_taps) out.taps.emplace_back("conv" + std::to_string(i + 1), h);
  }

  // [B, C, T', F'] -> mean over bands -> [B, T', C]
  Var seq = permute(tape, mean_axis(tape, h, 3), {0, 2, 1});
  for (std::size_t i = 0; i < cfg.gru_layers; ++i) {
    seq = bigru(tape, model.gru_fwd[i], model.gru_bwd[i], seq);
    if (collect_taps) out.taps.emplace_back("gru" + std::to_string(i + 1), seq);
  }

  const Tensor<T>& sv = tape.value(seq);
  const std::size_t frames_out = sv.dim(1), feat = sv.dim(2);
  Var flat = reshape(tape, seq, {batch * frames_out, feat});
  Var strong_logit =
      reshape(tape, linear(tape, flat, tape.parameter(*model.strong_w),
                           tape.parameter(*model.strong_b)),
              {batch, frames_out, cfg.n_classes});
  out.strong = sigmoid(tape, strong_logit);

  Var att_logit = reshape(tape, linear(tape, flat, tape.parameter(*model.att_w),
                                       tape.parameter(*model.att_b)),
                          {batch, frames_out, cfg.n_classes});
  Var att = softmax(tape, att_logit, 1);  // normalized over time per class
  out.weak = sum_axis(tape, mul(tape, att, out.strong), 1);
  if (collect_taps) {
    out.taps.emplace_back("strong", out.strong);
    out.taps.emplace_back("weak", out.weak);
  }
  return out;
}

// ---- config (de)serialization -----------------------------------------------

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

inline std::vector<std::size_t> split_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(static_cast<std::size_t>(std::stoul(item)));
    } catch (const std::exception&) {
      throw ConfigError("bad size list entry: " + item);
    }
  }
  if (out.empty()) throw ConfigError("empty size list");
  return out;
}

inline io::KvMap model_config_to_kv(const ModelConfig& cfg) {
  io::KvMap kv;
  kv["model.variant"] = cfg.variant;
  kv["model.n_classes"] = std::to_string(cfg.n_classes);
  kv["model.frames"] = std::to_string(cfg.frames);
  kv["model.bands"] = std::to_string(cfg.bands);
  kv["model.channels"] = join_sizes(cfg.channels);
  kv["model.time_pool"] = join_sizes(cfg.time_pool);
  kv["model.freq_pool"] = join_sizes(cfg.freq_pool);
  kv["model.kernel"] = std::to_string(cfg.kernel);
  kv["model.window"] = std::to_string(cfg.window);
  kv["model.attention"] = cfg.use_attention ? "on" : "off";
  kv["model.temperature"] = std::to_string(cfg.temperature);
  kv["model.reduction"] = std::to_string(cfg.reduction);
  kv["model.norm"] = cfg.use_norm ? "on" : "off";
  kv["model.act"] = cfg.act == Activation::kGlu ? "glu" : "relu";
  kv["model.gru_hidden"] = std::to_string(cfg.gru_hidden);
  kv["model.gru_layers"] = std::to_string(cfg.gru_layers);
  return kv;
}

inline ModelConfig model_config_from_kv(const io::KvMap& kv) {
  ModelConfig cfg;
  cfg.variant = io::kv_str(kv, "model.variant", cfg.variant);
  cfg.n_classes = static_cast<std::size_t>(io::kv_long(kv, "model.n_classes",
                                                       static_cast<long>(cfg.n_classes)));
  cfg.frames = static_cast<std::size_t>(io::kv_long(kv, "model.frames",
                                                    static_cast<long>(cfg.frames)));
  cfg.bands = static_cast<std::size_t>(io::kv_long(kv, "model.bands",
                                                   static_cast<long>(cfg.bands)));
  if (kv.count("model.channels")) cfg.channels = split_sizes(kv.at("model.channels"));
  if (kv.count("model.time_pool")) cfg.time_pool = split_sizes(kv.at("model.time_pool"));
  if (kv.count("model.freq_pool")) cfg.freq_pool = split_sizes(kv.at("model.freq_pool"));
  cfg.kernel = static_cast<std::size_t>(io::kv_long(kv, "model.kernel",
                                                    static_cast<long>(cfg.kernel)));
  cfg.window = static_cast<std::size_t>(io::kv_long(kv, "model.window",
                                                    static_cast<long>(cfg.window)));
  cfg.use_attention = io::kv_bool(kv, "model.attention", cfg.use_attention);
  cfg.temperature = io::kv_double(kv, "model.temperature", cfg.temperature);
  cfg.reduction = static_cast<std::size_t>(io::kv_long(kv, "model.reduction",
                                                       static_cast<long>(cfg.reduction)));
  cfg.use_norm = io::kv_bool(kv, "model.norm", cfg.use_norm);
  const std::string act = io::kv_str(kv, "model.act", cfg.act == Activation::kGlu ? "glu"
                                                                                  : "relu");
  if (act == "glu") {
    cfg.act = Activation::kGlu;
  } else if (act == "relu") {
    cfg.act = Activation::kRelu;
  } else {
    throw ConfigError("unknown activation: " + act);
  }
  cfg.gru_hidden = static_cast<std::size_t>(io::kv_long(kv, "model.gru_hidden",
                                                        static_cast<long>(cfg.gru_hidden)));
  cfg.gru_layers = static_cast<std::size_t>(io::kv_long(kv, "model.gru_layers",
                                                        static_cast<long>(cfg.gru_layers)));
  return cfg;
}

template <typename T>
void save_sed_model(const std::string& path, const SedModel<T>& model,
                    const io::KvMap& extra = {}) {
  io::KvMap kv = model_config_to_kv(model.cfg);
  for (const auto& [k, v] : extra) kv[k] = v;
  io::save_checkpoint(path, kv, model.store);
}

// Rebuilds the architecture from the embedded config, then loads the weights.
template <typename T>
SedModel<T> load_sed_model(const std::string& path) {
  io::KvMap kv = io::read_checkpoint_config(path);
  SedModel<T> model = make_sed_model<T>(model_config_from_kv(kv), 0);
  io::load_checkpoint(path, model.store);
  return model;
}

inline std::size_t model_param_count(const ModelConfig& cfg) {
  const bool dynamic = variant_is_dynamic(cfg.variant);
  std::vector<std::size_t> frames_in, bands_in;
  stack_extents(cfg, frames_in, bands_in);
  std::size_t n = 0, c_in = 1;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    BlockConfig bc;
    bc.kind = (i == 0 || !dynamic) ? BlockKind::kStatic : BlockKind::kDynamic;
    if (dynamic) bc.axis = variant_axis(cfg.variant);
    bc.c_in = c_in;
    bc.c_out = cfg.channels[i];
    bc.kernel = cfg.kernel;
    bc.window = cfg.window;
    bc.reduction = cfg.reduction;
    bc.use_norm = cfg.use_norm;
    bc.act = cfg.act;
    bc.frames = frames_in[i];
    bc.bands = bands_in[i];
    n += block_param_count(bc);
    c_in = cfg.channels[i];
  }
  std::size_t gru_in = cfg.channels.back();
  for (std::size_t i = 0; i < cfg.gru_layers; ++i) {
    n += 2 * 3 * (cfg.gru_hidden * gru_in + cfg.gru_hidden * cfg.gru_hidden + cfg.gru_hidden);
    gru_in = 2 * cfg.gru_hidden;
  }
  const std::size_t head_in = cfg.gru_layers > 0 ? 2 * cfg.gru_hidden : cfg.channels.back();
  n += 2 * (cfg.n_classes * head_in + cfg.n_classes);
  return n;
}

}  // namespace ffdconv
