#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "ffdconv/errors.hpp"
#include "ffdconv/tensor.hpp"

namespace ffdconv {

struct WaveClip {
  std::vector<double> samples;  // in [-1, 1]
  std::size_t sample_rate = 0;

  double duration_s() const {
    return sample_rate ? static_cast<double>(samples.size()) / static_cast<double>(sample_rate)
                       : 0.0;
  }
};

struct FeatureParams {
  std::size_t n_fft = 2048;
  std::size_t hop = 256;
  std::size_t n_mels = 128;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = 1e-6;
};

namespace audio {

// ---- wav i/o ----------------------------------------------------------------

namespace wav_detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void put_u32(std::vector<unsigned char>& v, std::uint32_t x) {
  v.push_back(x & 0xff);
  v.push_back((x >> 8) & 0xff);
  v.push_back((x >> 16) & 0xff);
  v.push_back((x >> 24) & 0xff);
}

inline void put_u16(std::vector<unsigned char>& v, std::uint16_t x) {
  v.push_back(x & 0xff);
  v.push_back((x >> 8) & 0xff);
}

}  // namespace wav_detail

// Reads RIFF/WAVE, PCM16 or IEEE float32, mono or stereo (stereo is averaged
// down to mono).
inline WaveClip read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open wav file: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  using wav_detail::read_u16;
  using wav_detail::read_u32;
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw IoError("not a RIFF/WAVE file: " + path);
  }
  std::size_t pos = 12;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t sample_rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    std::uint32_t chunk_len = read_u32(hdr + 4);
    const unsigned char* body = hdr + 8;
    if (pos + 8 + chunk_len > bytes.size()) throw IoError("truncated wav chunk in " + path);
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (chunk_len < 16) throw IoError("malformed fmt chunk in " + path);
      format = read_u16(body);
      channels = read_u16(body + 2);
      sample_rate = read_u32(body + 4);
      bits = read_u16(body + 14);
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = body;
      data_len = chunk_len;
    }
    pos += 8 + chunk_len + (chunk_len & 1);  // chunks are word-aligned
  }
  if (!data || sample_rate == 0) throw IoError("wav missing fmt/data chunk: " + path);
  if (channels != 1 && channels != 2) {
    throw IoError("wav has " + std::to_string(channels) + " channels; want mono or stereo: " +
                  path);
  }
  WaveClip clip;
  clip.sample_rate = sample_rate;
  if (format == 1 && bits == 16) {
    std::size_t n = data_len / (2 * channels);
    clip.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0;
      for (std::size_t c = 0; c < channels; ++c) {
        auto raw = static_cast<std::int16_t>(read_u16(data + (i * channels + c) * 2));
        acc += static_cast<double>(raw) / 32768.0;
      }
      clip.samples[i] = acc / channels;
    }
  } else if (format == 3 && bits == 32) {
    std::size_t n = data_len / (4 * channels);
    clip.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0;
      for (std::size_t c = 0; c < channels; ++c) {
        std::uint32_t u = read_u32(data + (i * channels + c) * 4);
        float f;
        std::memcpy(&f, &u, 4);
        acc += static_cast<double>(f);
      }
      clip.samples[i] = acc / channels;
    }
  } else {
    throw IoError("unsupported wav encoding (format=" + std::to_string(format) + ", bits=" +
                  std::to_string(bits) + "); want PCM16 or float32: " + path);
  }
  return clip;
}

// Writes mono PCM16.
inline void write_wav(const std::string& path, const WaveClip& clip) {
  using wav_detail::put_u16;
  using wav_detail::put_u32;
  std::vector<unsigned char> out;
  std::uint32_t data_len = static_cast<std::uint32_t>(clip.samples.size() * 2);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_len);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate * 2));
  put_u16(out, 2);
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_len);
  for (double s : clip.samples) {
    long q = std::lround(s * 32768.0);
    auto v = static_cast<std::int16_t>(std::clamp<long>(q, -32768, 32767));
    put_u16(out, static_cast<std::uint16_t>(v));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write wav file: " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write to wav file: " + path);
}

// ---- fft / stft ---------------------------------------------------------------

// Iterative radix-2 decimation-in-time FFT; length must be a power of two.
inline void fft_inplace(std::vector<std::complex<double>>& a) {
  std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) {
    throw ConfigError("fft length must be a power of two, got " + std::to_string(n));
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

// Periodic Hann window.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                static_cast<double>(n));
  }
  return w;
}

// Reflection about the edge samples, folded so any pad size works.
inline double reflect_sample(const std::vector<double>& x, std::ptrdiff_t i) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  if (n == 1) return x[0];
  const std::ptrdiff_t period = 2 * (n - 1);
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  if (m >= n) m = period - m;
  return x[static_cast<std::size_t>(m)];
}

// Power spectrogram [T, n_fft/2 + 1] with center-reflect padding:
// frame t covers padded samples [t*hop, t*hop + n_fft) where the pad is
// n_fft/2 on each side, giving T = floor(N/hop) + 1.
inline Tensor<double> stft_power(const std::vector<double>& samples, std::size_t n_fft,
                                 std::size_t hop, const std::vector<double>& window) {
  if (hop == 0 || n_fft < hop) {
    throw ConfigError("stft: need n_fft >= hop > 0, got n_fft=" + std::to_string(n_fft) +
                      " hop=" + std::to_string(hop));
  }
  if (window.size() != n_fft) {
    throw ConfigError("stft: window length " + std::to_string(window.size()) +
                      " must equal n_fft " + std::to_string(n_fft));
  }
  if (samples.size() < hop) {
    throw IoError("stft: clip has " + std::to_string(samples.size()) +
                  " samples, shorter than one hop (" + std::to_string(hop) + ")");
  }
  const std::size_t frames = samples.size() / hop + 1;
  const std::size_t bins = n_fft / 2 + 1;
  const auto pad = static_cast<std::ptrdiff_t>(n_fft / 2);
  Tensor<double> out({frames, bins});
  std::vector<std::complex<double>> buf(n_fft);
  for (std::size_t t = 0; t < frames; ++t) {
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t * hop) - pad;
    for (std::size_t i = 0; i < n_fft; ++i) {
      buf[i] = {reflect_sample(samples, start + static_cast<std::ptrdiff_t>(i)) * window[i], 0.0};
    }
    fft_inplace(buf);
    double* row = out.data() + t * bins;
    for (std::size_t k = 0; k < bins; ++k) row[k] = std::norm(buf[k]);
  }
  return out;
}

// ---- mel ----------------------------------------------------------------------

// Slaney mel scale: linear below 1 kHz, logarithmic above.
inline double hz_to_mel(double hz) {
  constexpr double kLinStep = 200.0 / 3.0;
  if (hz < 1000.0) return hz / kLinStep;
  return 15.0 + 27.0 * std::log(hz / 1000.0) / std::log(6.4);
}

inline double mel_to_hz(double mel) {
  constexpr double kLinStep = 200.0 / 3.0;
  if (mel < 15.0) return mel * kLinStep;
  return 1000.0 * std::pow(6.4, (mel - 15.0) / 27.0);
}

// Triangular filters on the Slaney mel scale, unit peak height, edges at the
// neighbouring filters' centers. [n_mels, n_fft/2 + 1]
inline Tensor<double> mel_filterbank(std::size_t n_mels, std::size_t n_fft, double sample_rate,
                                     double fmin, double fmax) {
  if (n_mels == 0) throw ConfigError("mel_filterbank: n_mels must be positive");
  if (!(fmin >= 0.0) || !(fmax > fmin) || fmax > sample_rate / 2.0 + 1e-9) {
    throw ConfigError("mel_filterbank: need 0 <= fmin < fmax <= sample_rate/2");
  }
  const std::size_t bins = n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(fmin);
  const double mel_hi = hz_to_mel(fmax);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                      static_cast<double>(n_mels + 1));
  }
  Tensor<double> fb = Tensor<double>::zeros({n_mels, bins});
  std::vector<std::size_t> empty;
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], center = edges[m + 1], hi = edges[m + 2];
    bool any = false;
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
      double w = 0.0;
      if (f > lo && f < hi) {
        w = f <= center ? (f - lo) / (center - lo) : (hi - f) / (hi - center);
      }
      if (w > 0.0) {
        fb[m * bins + k] = w;
        any = true;
      }
    }
    if (!any) empty.push_back(m);
  }
  if (!empty.empty()) {
    std::string list;
    for (std::size_t i = 0; i < empty.size() && i < 8; ++i) {
      list += (i ? "," : "") + std::to_string(empty[i]);
    }
    if (empty.size() > 8) list += ",...";
    throw ConfigError("mel_filterbank: " + std::to_string(empty.size()) +
                      " filters cover no FFT bin (indices " + list +
                      "); reduce n_mels or increase n_fft");
  }
  return fb;
}

// Log mel spectrogram [frames, n_mels]: log(filterbank . power + log_floor).
template <typename T>
Tensor<T> log_mel(const WaveClip& clip, const FeatureParams& p) {
  if (clip.sample_rate == 0) throw ConfigError("log_mel: clip has no sample rate");
  auto window = hann_window(p.n_fft);
  Tensor<double> power = stft_power(clip.samples, p.n_fft, p.hop, window);
  Tensor<double> fb = mel_filterbank(p.n_mels, p.n_fft, static_cast<double>(clip.sample_rate),
                                     p.fmin, p.fmax);
  const std::size_t frames = power.dim(0), bins = power.dim(1);
  Tensor<T> out({frames, p.n_mels});
  for (std::size_t t = 0; t < frames; ++t) {
    const double* prow = power.data() + t * bins;
    T* orow = out.data() + t * p.n_mels;
    for (std::size_t m = 0; m < p.n_mels; ++m) {
      const double* frow = fb.data() + m * bins;
      double acc = 0.0;
      for (std::size_t k = 0; k < bins; ++k) acc += frow[k] * prow[k];
      orow[m] = static_cast<T>(std::log(acc + p.log_floor));
    }
  }
  return out;
}

}  // namespace audio
}  // namespace ffdconv
