#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ffdconv/autograd.hpp"
#include "ffdconv/errors.hpp"
#include "ffdconv/io.hpp"
#include "ffdconv/metrics.hpp"
#include "ffdconv/model.hpp"
#include "ffdconv/ops.hpp"
#include "ffdconv/rng.hpp"
#include "ffdconv/synth.hpp"
#include "ffdconv/tensor.hpp"

namespace ffdconv {

// Mean binary cross-entropy between predicted probabilities and targets.
// Probabilities are clamped to [eps, 1-eps]; the clamp saturates the gradient.
template <typename T>
Var bce_loss(Tape<T>& tape, Var pred, Var target, T eps = T(1e-7)) {
  const Tensor<T>& p = tape.value(pred);
  const Tensor<T>& y = tape.value(target);
  if (!p.same_shape(y)) {
    throw ShapeError("bce_loss: prediction shape " + shape_str(p.shape()) +
                     " does not match target " + shape_str(y.shape()));
  }
  const std::size_t n = p.size();
  if (n == 0) throw ShapeError("bce_loss: empty prediction");
  const T lo = eps, hi = T(1) - eps;
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T pc = std::min(hi, std::max(lo, p[i]));
    acc -= y[i] * std::log(pc) + (T(1) - y[i]) * std::log(T(1) - pc);
  }
  Tensor<T> out({1});
  out[0] = acc / static_cast<T>(n);
  return tape.emplace(
      "bce_loss", {pred, target}, std::move(out),
      [pred, target, lo, hi, n](Tape<T>& t, std::size_t id) {
        const T g = t.mutable_node(id).grad[0] / static_cast<T>(n);
        const Tensor<T>& p = t.value(pred);
        const Tensor<T>& y = t.value(target);
        if (t.needs_grad(pred)) {
          Tensor<T> gp(p.shape());
          for (std::size_t i = 0; i < n; ++i) {
            if (p[i] < lo || p[i] > hi) {
              gp[i] = T(0);
            } else {
              gp[i] = g * ((T(1) - y[i]) / (T(1) - p[i]) - y[i] / p[i]);
            }
          }
          t.accumulate_grad(pred, gp);
        }
        if (t.needs_grad(target)) {
          Tensor<T> gy(y.shape());
          for (std::size_t i = 0; i < n; ++i) {
            const T pc = std::min(hi, std::max(lo, p[i]));
            gy[i] = g * (std::log(T(1) - pc) - std::log(pc));
          }
          t.accumulate_grad(target, gy);
        }
      });
}

// ---- optimizer --------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment buffers follow the store's registration
// order; non-trainable parameters (persistent buffers) are left untouched.
template <typename T>
class Adam {
 public:
  explicit Adam(const ParamStore<T>& store, AdamConfig cfg = {}) : cfg_(cfg) {
    m_.reserve(store.count());
    v_.reserve(store.count());
    for (std::size_t i = 0; i < store.count(); ++i) {
      m_.push_back(Tensor<T>::zeros(store.at(i).value.shape()));
      v_.push_back(Tensor<T>::zeros(store.at(i).value.shape()));
    }
  }

  // Applies one update from the gradients accumulated on the store.
  void step(ParamStore<T>& store, T lr_scale = T(1)) {
    if (store.count() != m_.size()) {
      throw ConfigError("adam: parameter store does not match optimizer state");
    }
    ++steps_;
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T bc1 = T(1) - std::pow(b1, static_cast<T>(steps_));
    const T bc2 = T(1) - std::pow(b2, static_cast<T>(steps_));
    const T lr = lr_scale * static_cast<T>(cfg_.lr);
    const T eps = static_cast<T>(cfg_.eps);
    for (std::size_t i = 0; i < store.count(); ++i) {
      Parameter<T>& p = store.at(i);
      if (!p.value.same_shape(m_[i])) {
        throw ConfigError("adam: parameter " + p.name + " does not match optimizer state");
      }
      if (!p.trainable) continue;
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const T g = p.grad[k];
        m_[i][k] = b1 * m_[i][k] + (T(1) - b1) * g;
        v_[i][k] = b2 * v_[i][k] + (T(1) - b2) * g * g;
        const T mhat = m_[i][k] / bc1;
        const T vhat = v_[i][k] / bc2;
        p.value[k] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  std::size_t steps() const { return steps_; }

 private:
  AdamConfig cfg_;
  std::size_t steps_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

// ---- schedules ---------------------------------------------------------------

// Exponential ramp toward 1 over the first `warmup` epochs: full rate from
// epoch `warmup` onward, exp(-5) of it at epoch 0.
inline double warmup_scale(std::size_t epoch, std::size_t warmup) {
  if (warmup == 0 || epoch >= warmup) return 1.0;
  const double r = 1.0 - static_cast<double>(epoch) / static_cast<double>(warmup);
  return std::exp(-5.0 * r * r);
}

// Linear anneal of the attention temperature from `start` at epoch 0 down to
// 1 at epoch `anneal` and beyond.
inline double temperature_at(std::size_t epoch, double start, std::size_t anneal) {
  if (anneal == 0 || epoch >= anneal) return 1.0;
  return 1.0 + (start - 1.0) *
                   (1.0 - static_cast<double>(epoch) / static_cast<double>(anneal));
}

// ---- evaluation ---------------------------------------------------------------

struct EvalResult {
  PrfResult eb, ib;
  PrfCounts eb_counts, ib_counts;
};

// Runs the model over a dataset, post-processes frame probabilities with a
// median filter, decodes events, and pools match counts across clips.
template <typename T>
EvalResult evaluate(SedModel<T>& model, const SyntheticDataset<T>& ds, std::size_t batch_size,
                    std::size_t median_len, double threshold) {
  if (ds.clips.empty()) throw ConfigError("evaluate: empty dataset");
  if (batch_size == 0) throw ConfigError("evaluate: batch size must be positive");
  EvalResult res;
  for (std::size_t start = 0; start < ds.clips.size(); start += batch_size) {
    const std::size_t bsz = std::min(batch_size, ds.clips.size() - start);
    std::vector<std::size_t> idx(bsz);
    for (std::size_t i = 0; i < bsz; ++i) idx[i] = start + i;
    Tape<T> tape;
    Var x = tape.constant(batch_features(ds, idx));
    ModelOutput<T> out = model_forward(tape, model, x, /*training=*/false);
    const Tensor<T>& strong = tape.value(out.strong);
    const std::size_t frames = strong.shape()[1], classes = strong.shape()[2];
    const double hop = ds.spec.clip_seconds / static_cast<double>(frames);
    for (std::size_t b = 0; b < bsz; ++b) {
      Tensor<double> probs({frames, classes});
      for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t c = 0; c < classes; ++c) {
          probs.at2(t, c) = static_cast<double>(strong.at3(b, t, c));
        }
      }
      EventList pred = decode_events(median_filter_probs(probs, median_len), threshold, hop);
      const EventList& truth = ds.clips[idx[b]].events;
      res.eb_counts += eb_counts(pred, truth);
      res.ib_counts += ib_counts(pred, truth);
    }
  }
  res.eb = prf_from_counts(res.eb_counts);
  res.ib = prf_from_counts(res.ib_counts);
  return res;
}

// ---- training loop -------------------------------------------------------------

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  AdamConfig adam;
  std::size_t warmup_epochs = 5;
  double temperature_start = 1.0;  // >1 anneals the attention softmax
  std::size_t temperature_epochs = 0;
  double weak_weight = 0.5;  // weight of the clip-level loss term
  std::size_t median_len = 7;
  double threshold = 0.5;
  std::uint64_t seed = 0;
};

inline io::KvMap train_config_to_kv(const TrainConfig& c) {
  io::KvMap kv;
  kv["train.epochs"] = std::to_string(c.epochs);
  kv["train.batch_size"] = std::to_string(c.batch_size);
  kv["train.lr"] = io::format_double(c.adam.lr);
  kv["train.warmup_epochs"] = std::to_string(c.warmup_epochs);
  kv["train.temperature_start"] = io::format_double(c.temperature_start);
  kv["train.temperature_epochs"] = std::to_string(c.temperature_epochs);
  kv["train.weak_weight"] = io::format_double(c.weak_weight);
  kv["train.median_len"] = std::to_string(c.median_len);
  kv["train.threshold"] = io::format_double(c.threshold);
  return kv;
}

inline TrainConfig train_config_from_kv(const io::KvMap& kv) {
  TrainConfig c;
  auto sz = [&](const char* key, std::size_t fallback) {
    long v = io::kv_long(kv, key, static_cast<long>(fallback));
    if (v < 0) throw ConfigError(std::string("negative value for ") + key);
    return static_cast<std::size_t>(v);
  };
  c.epochs = sz("train.epochs", c.epochs);
  c.batch_size = sz("train.batch_size", c.batch_size);
  c.adam.lr = io::kv_double(kv, "train.lr", c.adam.lr);
  c.warmup_epochs = sz("train.warmup_epochs", c.warmup_epochs);
  c.temperature_start = io::kv_double(kv, "train.temperature_start", c.temperature_start);
  c.temperature_epochs = sz("train.temperature_epochs", c.temperature_epochs);
  c.weak_weight = io::kv_double(kv, "train.weak_weight", c.weak_weight);
  c.median_len = sz("train.median_len", c.median_len);
  c.threshold = io::kv_double(kv, "train.threshold", c.threshold);
  return c;
}

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  double eb_f1 = 0.0;
  double ib_f1 = 0.0;
  double lr_scale = 1.0;
  double temperature = 1.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  const EpochStats& final() const { return history.back(); }
};

inline std::string metrics_csv_header() { return "epoch,loss,eb_f1,ib_f1"; }

inline std::string metrics_csv_row(const EpochStats& s) {
  std::ostringstream os;
  os << s.epoch << ',' << std::setprecision(10) << s.loss << ',' << s.eb_f1 << ',' << s.ib_f1;
  return os.str();
}

template <typename T>
TrainResult train_loop(SedModel<T>& model, const SyntheticDataset<T>& train_ds,
                       const SyntheticDataset<T>& val_ds, const TrainConfig& cfg,
                       std::ostream* log = nullptr, const std::string& metrics_csv = "") {
  if (train_ds.clips.empty() || val_ds.clips.empty()) {
    throw ConfigError("train_loop: datasets must be non-empty");
  }
  if (train_ds.spec.n_classes != model.cfg.n_classes ||
      train_ds.spec.frames != model.cfg.frames || train_ds.spec.bands != model.cfg.bands) {
    throw ConfigError("train_loop: dataset geometry does not match the model");
  }
  if (cfg.batch_size == 0 || cfg.epochs == 0) {
    throw ConfigError("train_loop: epochs and batch size must be positive");
  }

  const std::size_t out_frames = model_output_frames(model.cfg);
  Adam<T> opt(model.store, cfg.adam);
  Rng rng(Rng::mix(cfg.seed, 0x747261696eULL));
  std::vector<std::size_t> order(train_ds.clips.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr_scale = warmup_scale(epoch, cfg.warmup_epochs);
    const double tau = temperature_at(epoch, cfg.temperature_start, cfg.temperature_epochs);
    model.set_temperature(tau);

    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.uniform_index(i)]);
    }

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t bsz = std::min(cfg.batch_size, order.size() - start);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(start + bsz));
      Tape<T> tape;
      Var x = tape.constant(batch_features(train_ds, idx));
      ModelOutput<T> out = model_forward(tape, model, x, /*training=*/true);
      Var strong_t = tape.constant(batch_strong(train_ds, idx, out_frames));
      Var weak_t = tape.constant(batch_weak(train_ds, idx));
      Var loss = add(tape, bce_loss(tape, out.strong, strong_t),
                     scale(tape, bce_loss(tape, out.weak, weak_t),
                           static_cast<T>(cfg.weak_weight)));
      const double lval = static_cast<double>(tape.value(loss)[0]);
      if (!std::isfinite(lval)) {
        throw NumericError("train_loop: non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(start / cfg.batch_size));
      }
      loss_sum += lval * static_cast<double>(bsz);
      model.store.zero_grads();
      tape.backward(loss);
      opt.step(model.store, static_cast<T>(lr_scale));
    }

    EvalResult ev = evaluate(model, val_ds, cfg.batch_size, cfg.median_len, cfg.threshold);
    EpochStats stats;
    stats.epoch = epoch;
    stats.loss = loss_sum / static_cast<double>(order.size());
    stats.eb_f1 = ev.eb.f1;
    stats.ib_f1 = ev.ib.f1;
    stats.lr_scale = lr_scale;
    stats.temperature = tau;
    result.history.push_back(stats);
    if (log != nullptr) {
      *log << "epoch " << epoch << " loss " << std::fixed << std::setprecision(4) << stats.loss
           << " eb_f1 " << stats.eb_f1 << " ib_f1 " << stats.ib_f1 << std::defaultfloat
           << std::endl;
    }
  }

  if (!metrics_csv.empty()) {
    std::ofstream out(metrics_csv, std::ios::trunc);
    if (!out) throw IoError("cannot write metrics file: " + metrics_csv);
    out << metrics_csv_header() << '\n';
    for (const EpochStats& s : result.history) out << metrics_csv_row(s) << '\n';
  }
  return result;
}

}  // namespace ffdconv
