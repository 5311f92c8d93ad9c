#pragma once

#include <algorithm>
#include <cstddef>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ffdconv/errors.hpp"
#include "ffdconv/io.hpp"
#include "ffdconv/metrics.hpp"
#include "ffdconv/rng.hpp"
#include "ffdconv/tensor.hpp"

namespace ffdconv {

// Synthetic sound-event clips generated directly in feature space. Each class
// owns a disjoint range of frequency bands; an event raises that range above a
// fixed spectral background ramp for an interval aligned to the label grid.
// A per-clip multiplicative gain jitter keeps fixed absolute thresholds from
// solving the task outright, so models benefit from adapting to clip content.
struct SyntheticSpec {
  std::size_t n_classes = 4;
  std::size_t frames = 128;       // input feature frames per clip
  std::size_t bands = 64;         // feature bands, split evenly across classes
  std::size_t label_frames = 32;  // label grid; frames must be a multiple
  double clip_seconds = 8.0;
  std::size_t min_events = 1;  // events per clip, each a distinct class
  std::size_t max_events = 2;
  std::size_t min_len = 8;  // event length in label frames
  std::size_t max_len = 20;
  double background_lo = -6.0;  // spectral ramp from band 0 ...
  double background_hi = -2.0;  // ... to the top band
  double noise = 0.3;           // uniform noise half-width
  double noise_tilt = 0.0;      // noise grows along the band axis: the
                                // half-width at band f is
                                // noise * (1 + tilt * (2f/(F-1) - 1)),
                                // so denoising needs band-dependent filters
  double amp_lo = 2.5;          // event amplitude above the background
  double amp_hi = 4.0;
  double gain_lo = 0.85;  // per-clip multiplicative gain jitter
  double gain_hi = 1.15;
  double flicker = 0.0;  // amplitude of a broadband interference term
                         // flicker * g(t) * m(f): g is a low-rate sinusoid
                         // and m a spectral ramp, both redrawn per clip.
                         // Frame-level energy then swings independently of
                         // the events while per-band statistics, averaged
                         // over time, stay informative.
  std::size_t clutter = 0;      // max unlabeled blips per clip: band-local
                                // bursts one band-group wide and only a few
                                // input frames long, event-strength loud.
                                // Too short to decode as events, they make
                                // single-frame spectra unreliable while
                                // band-wise time statistics barely move.
  std::size_t clutter_len = 4;  // longest blip, in input frames

  std::size_t band_width() const { return bands / n_classes; }
  double hop_seconds() const { return clip_seconds / static_cast<double>(label_frames); }
};

inline void validate(const SyntheticSpec& spec) {
  if (spec.n_classes == 0 || spec.bands % spec.n_classes != 0) {
    throw ConfigError("synthetic spec: bands must divide evenly into classes");
  }
  if (spec.label_frames == 0 || spec.frames % spec.label_frames != 0) {
    throw ConfigError("synthetic spec: frames must be a multiple of label_frames");
  }
  if (spec.min_events == 0 || spec.max_events > spec.n_classes ||
      spec.min_events > spec.max_events) {
    throw ConfigError("synthetic spec: bad events-per-clip range");
  }
  if (spec.min_len == 0 || spec.max_len > spec.label_frames || spec.min_len > spec.max_len) {
    throw ConfigError("synthetic spec: bad event length range");
  }
  if (spec.noise_tilt < 0.0 || spec.noise_tilt > 1.0) {
    throw ConfigError("synthetic spec: noise_tilt must be in [0, 1]");
  }
  if (spec.flicker < 0.0) throw ConfigError("synthetic spec: flicker must be >= 0");
  if (spec.clutter > 0 && (spec.clutter_len == 0 || spec.clutter_len > spec.frames)) {
    throw ConfigError("synthetic spec: clutter_len must be in [1, frames]");
  }
}

template <typename T>
struct SyntheticClip {
  Tensor<T> features;  // [1, frames, bands]
  EventList events;    // seconds, aligned to the label grid, sorted
};

template <typename T>
struct SyntheticDataset {
  SyntheticSpec spec;
  std::vector<SyntheticClip<T>> clips;
};

template <typename T>
SyntheticClip<T> synth_clip(const SyntheticSpec& spec, Rng& rng) {
  validate(spec);
  const std::size_t n_events =
      spec.min_events + rng.uniform_index(spec.max_events - spec.min_events + 1);

  // Distinct classes per clip so same-class events never merge.
  std::vector<std::size_t> classes(spec.n_classes);
  for (std::size_t c = 0; c < spec.n_classes; ++c) classes[c] = c;
  for (std::size_t i = 0; i < n_events; ++i) {
    std::size_t j = i + rng.uniform_index(spec.n_classes - i);
    std::swap(classes[i], classes[j]);
  }

  struct Patch {
    std::size_t label, onset, len;  // label-grid frames
    double amp;
  };
  std::vector<Patch> patches;
  EventList events;
  for (std::size_t i = 0; i < n_events; ++i) {
    Patch p;
    p.label = classes[i];
    p.len = spec.min_len + rng.uniform_index(spec.max_len - spec.min_len + 1);
    p.onset = rng.uniform_index(spec.label_frames - p.len + 1);
    p.amp = rng.uniform(spec.amp_lo, spec.amp_hi);
    patches.push_back(p);
    events.push_back({p.label, static_cast<double>(p.onset) * spec.hop_seconds(),
                      static_cast<double>(p.onset + p.len) * spec.hop_seconds()});
  }
  std::sort(events.begin(), events.end(), event_order);

  const double gain = rng.uniform(spec.gain_lo, spec.gain_hi);
  // Interference draws happen only when enabled so clips generated without it
  // keep consuming the same random stream as before the knob existed.
  double fl_rate = 0.0, fl_phase = 0.0, fl_lo = 0.0, fl_hi = 0.0;
  if (spec.flicker > 0.0) {
    fl_rate = rng.uniform(1.0, 3.0);
    fl_phase = rng.uniform(0.0, 1.0);
    fl_lo = rng.uniform(0.0, 1.0);
    fl_hi = rng.uniform(0.0, 1.0);
  }
  const std::size_t repeat = spec.frames / spec.label_frames;
  const std::size_t bw = spec.band_width();

  // Unlabeled clutter blips, placed on the input-frame grid.
  struct Blip {
    std::size_t t0 = 0, t1 = 0, f0 = 0, f1 = 0;
    double amp = 0.0;
  };
  std::vector<Blip> blips;
  if (spec.clutter > 0) {
    const std::size_t n_blips = rng.uniform_index(spec.clutter + 1);
    for (std::size_t i = 0; i < n_blips; ++i) {
      Blip bl;
      const std::size_t len = 1 + rng.uniform_index(spec.clutter_len);
      bl.t0 = rng.uniform_index(spec.frames - len + 1);
      bl.t1 = bl.t0 + len;
      const std::size_t width = std::min(bw, spec.bands);
      bl.f0 = rng.uniform_index(spec.bands - width + 1);
      bl.f1 = bl.f0 + width;
      bl.amp = rng.uniform(spec.amp_lo, spec.amp_hi);
      blips.push_back(bl);
    }
  }

  SyntheticClip<T> clip;
  clip.events = std::move(events);
  clip.features = Tensor<T>({1, spec.frames, spec.bands});
  for (std::size_t t = 0; t < spec.frames; ++t) {
    for (std::size_t f = 0; f < spec.bands; ++f) {
      double ramp = spec.bands > 1 ? static_cast<double>(f) / static_cast<double>(spec.bands - 1)
                                   : 0.0;
      double v = spec.background_lo + (spec.background_hi - spec.background_lo) * ramp;
      for (const Patch& p : patches) {
        const bool in_time = t >= p.onset * repeat && t < (p.onset + p.len) * repeat;
        const bool in_band = f >= p.label * bw && f < (p.label + 1) * bw;
        if (in_time && in_band) v += p.amp;
      }
      if (spec.flicker > 0.0) {
        const double swing =
            0.5 * (1.0 + std::sin(2.0 * M_PI *
                                  (fl_rate * static_cast<double>(t) /
                                       static_cast<double>(spec.frames) +
                                   fl_phase)));
        v += spec.flicker * swing * (fl_lo + (fl_hi - fl_lo) * ramp);
      }
      const double half = spec.noise * (1.0 + spec.noise_tilt * (2.0 * ramp - 1.0));
      v += rng.uniform(-half, half);
      clip.features.at3(0, t, f) = static_cast<T>(gain * v);
    }
  }
  return clip;
}

template <typename T>
SyntheticDataset<T> synth_dataset(const SyntheticSpec& spec, std::size_t n_clips,
                                  std::uint64_t seed) {
  validate(spec);
  Rng rng(Rng::mix(seed, 0x73796e7468ULL));
  SyntheticDataset<T> ds;
  ds.spec = spec;
  ds.clips.reserve(n_clips);
  for (std::size_t i = 0; i < n_clips; ++i) ds.clips.push_back(synth_clip<T>(spec, rng));
  return ds;
}

// ---- key=value serialization -------------------------------------------------

inline io::KvMap synth_spec_to_kv(const SyntheticSpec& s) {
  io::KvMap kv;
  kv["synth.n_classes"] = std::to_string(s.n_classes);
  kv["synth.frames"] = std::to_string(s.frames);
  kv["synth.bands"] = std::to_string(s.bands);
  kv["synth.label_frames"] = std::to_string(s.label_frames);
  kv["synth.clip_seconds"] = io::format_double(s.clip_seconds);
  kv["synth.min_events"] = std::to_string(s.min_events);
  kv["synth.max_events"] = std::to_string(s.max_events);
  kv["synth.min_len"] = std::to_string(s.min_len);
  kv["synth.max_len"] = std::to_string(s.max_len);
  kv["synth.background_lo"] = io::format_double(s.background_lo);
  kv["synth.background_hi"] = io::format_double(s.background_hi);
  kv["synth.noise"] = io::format_double(s.noise);
  kv["synth.noise_tilt"] = io::format_double(s.noise_tilt);
  kv["synth.amp_lo"] = io::format_double(s.amp_lo);
  kv["synth.amp_hi"] = io::format_double(s.amp_hi);
  kv["synth.gain_lo"] = io::format_double(s.gain_lo);
  kv["synth.gain_hi"] = io::format_double(s.gain_hi);
  kv["synth.flicker"] = io::format_double(s.flicker);
  return kv;
}

inline SyntheticSpec synth_spec_from_kv(const io::KvMap& kv) {
  SyntheticSpec s;
  auto sz = [&](const char* key, std::size_t fallback) {
    long v = io::kv_long(kv, key, static_cast<long>(fallback));
    if (v < 0) throw ConfigError(std::string("negative value for ") + key);
    return static_cast<std::size_t>(v);
  };
  s.n_classes = sz("synth.n_classes", s.n_classes);
  s.frames = sz("synth.frames", s.frames);
  s.bands = sz("synth.bands", s.bands);
  s.label_frames = sz("synth.label_frames", s.label_frames);
  s.clip_seconds = io::kv_double(kv, "synth.clip_seconds", s.clip_seconds);
  s.min_events = sz("synth.min_events", s.min_events);
  s.max_events = sz("synth.max_events", s.max_events);
  s.min_len = sz("synth.min_len", s.min_len);
  s.max_len = sz("synth.max_len", s.max_len);
  s.background_lo = io::kv_double(kv, "synth.background_lo", s.background_lo);
  s.background_hi = io::kv_double(kv, "synth.background_hi", s.background_hi);
  s.noise = io::kv_double(kv, "synth.noise", s.noise);
  s.noise_tilt = io::kv_double(kv, "synth.noise_tilt", s.noise_tilt);
  s.amp_lo = io::kv_double(kv, "synth.amp_lo", s.amp_lo);
  s.amp_hi = io::kv_double(kv, "synth.amp_hi", s.amp_hi);
  s.gain_lo = io::kv_double(kv, "synth.gain_lo", s.gain_lo);
  s.gain_hi = io::kv_double(kv, "synth.gain_hi", s.gain_hi);
  s.flicker = io::kv_double(kv, "synth.flicker", s.flicker);
  validate(s);
  return s;
}

// ---- batching helpers -------------------------------------------------------

// Stack selected clips into one batch tensor [n, 1, frames, bands].
template <typename T>
Tensor<T> batch_features(const SyntheticDataset<T>& ds, const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw ConfigError("batch_features: empty index list");
  Tensor<T> out({idx.size(), 1, ds.spec.frames, ds.spec.bands});
  const std::size_t per = ds.spec.frames * ds.spec.bands;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Tensor<T>& src = ds.clips.at(idx[i]).features;
    std::copy(src.data(), src.data() + per, out.data() + i * per);
  }
  return out;
}

// Strong targets [n, out_frames, n_classes] rasterized on the requested grid.
template <typename T>
Tensor<T> batch_strong(const SyntheticDataset<T>& ds, const std::vector<std::size_t>& idx,
                       std::size_t out_frames) {
  if (idx.empty() || out_frames == 0) throw ConfigError("batch_strong: empty batch or grid");
  const double hop = ds.spec.clip_seconds / static_cast<double>(out_frames);
  Tensor<T> out({idx.size(), out_frames, ds.spec.n_classes});
  const std::size_t per = out_frames * ds.spec.n_classes;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    Tensor<T> grid =
        rasterize_events<T>(ds.clips.at(idx[i]).events, out_frames, ds.spec.n_classes, hop);
    std::copy(grid.data(), grid.data() + per, out.data() + i * per);
  }
  return out;
}

// Weak (clip-level presence) targets [n, n_classes].
template <typename T>
Tensor<T> batch_weak(const SyntheticDataset<T>& ds, const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw ConfigError("batch_weak: empty index list");
  Tensor<T> out({idx.size(), ds.spec.n_classes});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto weak = weak_labels_from_events<T>(ds.clips.at(idx[i]).events, ds.spec.n_classes);
    std::copy(weak.begin(), weak.end(), out.data() + i * ds.spec.n_classes);
  }
  return out;
}

}  // namespace ffdconv
