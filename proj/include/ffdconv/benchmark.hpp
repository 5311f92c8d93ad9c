#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <string>

#include "ffdconv/ddf.hpp"
#include "ffdconv/model.hpp"
#include "ffdconv/rng.hpp"
#include "ffdconv/synth.hpp"
#include "ffdconv/tensor.hpp"
#include "ffdconv/train.hpp"

namespace ffdconv {

// Reference study configuration, sized so a full sweep over model variants and
// seeds completes in minutes on a single core.

// Harder variant of the synthetic task defaults: weaker events under stronger,
// band-tilted noise and a wide per-clip gain jitter. Fixed filters have to
// compromise across bands and clips, which is what separates the dynamic
// variants from the static baseline.
inline SyntheticSpec benchmark_synth_spec() {
  SyntheticSpec spec;
  spec.noise = 1.1;
  spec.noise_tilt = 0.75;
  spec.amp_lo = 1.1;
  spec.amp_hi = 2.0;
  spec.gain_lo = 0.55;
  spec.gain_hi = 1.45;
  spec.flicker = 1.5;
  return spec;
}

inline ModelConfig benchmark_model_config(const std::string& variant = "ffd") {
  ModelConfig cfg;
  cfg.variant = variant;
  cfg.n_classes = 4;
  cfg.frames = 128;
  cfg.bands = 64;
  cfg.channels = {8, 16, 32};
  cfg.time_pool = {2, 2, 1};
  cfg.freq_pool = {2, 2, 2};
  cfg.kernel = 3;
  cfg.window = 3;
  cfg.gru_hidden = 32;
  cfg.gru_layers = 1;
  return cfg;
}

inline TrainConfig benchmark_train_config() {
  TrainConfig tc;
  tc.epochs = 30;
  tc.batch_size = 16;
  tc.adam.lr = 1e-3;
  tc.warmup_epochs = 5;
  tc.median_len = 7;
  tc.threshold = 0.5;
  return tc;
}

// Seed derivation shared by on-disk generation and in-memory training, so
// both paths produce identical splits for a given user seed.
inline constexpr std::uint64_t kTrainSplitTag = 1;
inline constexpr std::uint64_t kValSplitTag = 2;

inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t tag) {
  return Rng::mix(seed, tag);
}

// ---- fused-kernel micro-benchmark ---------------------------------------------

struct DdfBenchResult {
  double fused_ms = 0.0;
  double reference_ms = 0.0;
  double speedup = 0.0;
};

namespace bench_detail {

template <typename Fn>
double best_ms(Fn&& fn, std::size_t iters) {
  double best = 1e300;
  for (std::size_t i = 0; i < iters; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    fn();
    auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

}  // namespace bench_detail

// Times the fused dynamic-filtering forward kernel against the
// materialize-every-kernel reference on identical inputs.
template <typename T>
DdfBenchResult bench_ddf(DdfAxis axis, std::size_t batch, std::size_t channels,
                         std::size_t frames, std::size_t bands, std::size_t kernel,
                         std::size_t iters, std::uint64_t seed = 0) {
  Rng rng(Rng::mix(seed, 0x62656e6368ULL));
  const std::size_t kk = kernel * kernel;
  const std::size_t positions = ddf_positions(axis, frames, bands);
  Tensor<T> x({batch, channels, frames, bands});
  Tensor<T> spatial({batch, positions, kk});
  Tensor<T> channel({batch, channels, kk});
  x.fill_uniform(rng, T(-1), T(1));
  spatial.fill_uniform(rng, T(-1), T(1));
  channel.fill_uniform(rng, T(-1), T(1));

  // Outputs are preallocated and reused so both paths are timed at their
  // steady-state cost rather than the allocator's.
  Tensor<T> out_fused(x.shape());
  Tensor<T> out_ref(x.shape());
  volatile T sink = T(0);  // keep results observable
  auto fused = [&] {
    kernels::ddf_forward_into(x, spatial, channel, axis, out_fused);
    sink = sink + out_fused[0];
  };
  auto reference = [&] {
    kernels::ddf_reference_into(x, spatial, channel, axis, out_ref);
    sink = sink + out_ref[0];
  };
  fused();
  reference();  // warm-up both paths once
  DdfBenchResult res;
  res.fused_ms = bench_detail::best_ms(fused, iters);
  res.reference_ms = bench_detail::best_ms(reference, iters);
  res.speedup = res.fused_ms > 0.0 ? res.reference_ms / res.fused_ms : 0.0;
  return res;
}

}  // namespace ffdconv
