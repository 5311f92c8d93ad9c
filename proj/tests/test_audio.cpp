#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>

#include "ffdconv/audio.hpp"
#include "ffdconv/rng.hpp"

using namespace ffdconv;
using namespace ffdconv::audio;

namespace {

std::string tmp_path(const std::string& name) { return ::testing::TempDir() + name; }

// Independent Slaney-scale oracle, written directly from the piecewise
// definition: 3/200 Hz/mel below 1 kHz, then 27 mels per factor of 6.4.
double mel_oracle(double hz) {
  if (hz < 1000.0) return hz * 3.0 / 200.0;
  return 15.0 + 27.0 * (std::log(hz) - std::log(1000.0)) / std::log(6.4);
}

}  // namespace

TEST(Fft, ImpulseHasFlatSpectrum) {
  std::vector<std::complex<double>> a(16, {0.0, 0.0});
  a[0] = {1.0, 0.0};
  fft_inplace(a);
  for (const auto& v : a) EXPECT_NEAR(std::abs(v), 1.0, 1e-12);
}

TEST(Fft, SingleToneLandsInItsBin) {
  const std::size_t n = 64, bin = 5;
  std::vector<std::complex<double>> a(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = {std::cos(2.0 * std::numbers::pi * bin * i / n), 0.0};
  }
  fft_inplace(a);
  EXPECT_NEAR(std::abs(a[bin]), n / 2.0, 1e-9);
  EXPECT_NEAR(std::abs(a[n - bin]), n / 2.0, 1e-9);
  for (std::size_t k = 0; k < n; ++k) {
    if (k != bin && k != n - bin) EXPECT_NEAR(std::abs(a[k]), 0.0, 1e-9);
  }
}

TEST(Fft, ParsevalHolds) {
  Rng rng(31);
  const std::size_t n = 256;
  std::vector<std::complex<double>> a(n);
  double time_energy = 0;
  for (auto& v : a) {
    v = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    time_energy += std::norm(v);
  }
  fft_inplace(a);
  double freq_energy = 0;
  for (const auto& v : a) freq_energy += std::norm(v);
  EXPECT_NEAR(freq_energy / n, time_energy, 1e-9 * time_energy);
}

TEST(Fft, RejectsNonPowerOfTwo) {
  std::vector<std::complex<double>> a(24);
  EXPECT_THROW(fft_inplace(a), ConfigError);
}

TEST(Window, PeriodicHann) {
  auto w = hann_window(8);
  EXPECT_DOUBLE_EQ(w[0], 0.0);
  EXPECT_DOUBLE_EQ(w[4], 1.0);
  EXPECT_NEAR(w[2], 0.5, 1e-15);
  for (std::size_t k = 1; k < 8; ++k) EXPECT_NEAR(w[k], w[8 - k], 1e-15);
}

TEST(Stft, FrameCountFormula) {
  auto win = hann_window(2048);
  std::vector<double> ten_seconds(160000, 0.01);
  auto p = stft_power(ten_seconds, 2048, 256, win);
  EXPECT_EQ(p.dim(0), 626u);
  EXPECT_EQ(p.dim(1), 1025u);

  auto w8 = hann_window(8);
  std::vector<double> four(4, 0.5);
  auto tiny = stft_power(four, 8, 4, w8);  // N == hop -> 2 frames
  EXPECT_EQ(tiny.dim(0), 2u);

  std::vector<double> three(3, 0.5);
  EXPECT_THROW(stft_power(three, 8, 4, w8), IoError);
}

TEST(Stft, ConfigValidation) {
  auto w8 = hann_window(8);
  std::vector<double> x(32, 0.0);
  EXPECT_THROW(stft_power(x, 4, 8, w8), ConfigError);   // n_fft < hop
  EXPECT_THROW(stft_power(x, 16, 8, w8), ConfigError);  // window length mismatch
}

TEST(Stft, ConstantInputEnergyInBinsZeroAndOne) {
  // x[n] = 1 through a periodic Hann window w[n] = 1/2 - cos(...)/2:
  // the windowed frame *is* the window, whose DFT is N/2 at bin 0 and -N/4 at
  // bins +-1, zero elsewhere. Power: (N/2)^2, (N/4)^2, 0.
  const std::size_t n_fft = 256, hop = 64;
  auto win = hann_window(n_fft);
  std::vector<double> x(1024, 1.0);
  auto p = stft_power(x, n_fft, hop, win);
  const double bin0 = 128.0 * 128.0;  // (256/2)^2
  const double bin1 = 64.0 * 64.0;    // (256/4)^2
  for (std::size_t t = 0; t < p.dim(0); ++t) {
    const double* row = p.data() + t * p.dim(1);
    EXPECT_NEAR(row[0], bin0, 1e-6);
    EXPECT_NEAR(row[1], bin1, 1e-6);
    for (std::size_t k = 2; k < p.dim(1); ++k) EXPECT_NEAR(row[k], 0.0, 1e-8);
  }
}

TEST(Mel, ScaleMatchesClosedForm) {
  EXPECT_NEAR(hz_to_mel(1000.0), 15.0, 1e-12);
  EXPECT_NEAR(hz_to_mel(200.0 / 3.0), 1.0, 1e-12);
  EXPECT_NEAR(hz_to_mel(500.0), 7.5, 1e-12);
  EXPECT_NEAR(hz_to_mel(2000.0), 15.0 + 27.0 * std::log(2.0) / std::log(6.4), 1e-12);
  for (double hz : {10.0, 123.4, 999.9, 1000.1, 3141.5, 8000.0}) {
    EXPECT_NEAR(hz_to_mel(hz), mel_oracle(hz), 1e-10) << hz;
    EXPECT_NEAR(mel_to_hz(hz_to_mel(hz)), hz, 1e-8 * hz) << hz;
  }
}

TEST(Mel, FilterbankProperties) {
  auto fb = mel_filterbank(128, 2048, 16000.0, 0.0, 8000.0);
  EXPECT_EQ(fb.shape(), (Shape{128, 1025}));
  double peak_min = 1.0;
  for (std::size_t m = 0; m < 128; ++m) {
    double peak = 0.0;
    for (std::size_t k = 0; k < 1025; ++k) {
      double w = fb[m * 1025 + k];
      EXPECT_GE(w, 0.0);
      EXPECT_LE(w, 1.0);
      peak = std::max(peak, w);
    }
    EXPECT_GT(peak, 0.0) << "filter " << m << " empty";
    peak_min = std::min(peak_min, peak);
  }
  // unit-height triangles: sampled peaks sit near 1 even off-grid
  EXPECT_GT(peak_min, 0.5);
  // every FFT bin strictly between the first and last centers is covered
  const double first_center = mel_to_hz(hz_to_mel(0.0) + (hz_to_mel(8000.0) - hz_to_mel(0.0)) / 129.0);
  const double last_center =
      mel_to_hz(hz_to_mel(0.0) + 128.0 * (hz_to_mel(8000.0) - hz_to_mel(0.0)) / 129.0);
  for (std::size_t k = 0; k < 1025; ++k) {
    double f = k * 16000.0 / 2048.0;
    if (f > first_center && f < last_center) {
      double col = 0.0;
      for (std::size_t m = 0; m < 128; ++m) col += fb[m * 1025 + k];
      EXPECT_GT(col, 0.0) << "bin " << k << " (" << f << " Hz) uncovered";
    }
  }
}

TEST(Mel, TooManyFiltersIsAnError) {
  try {
    mel_filterbank(300, 512, 16000.0, 0.0, 8000.0);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("filters cover no FFT bin"), std::string::npos);
  }
}

TEST(LogMel, SilenceIsLogFloor) {
  WaveClip clip;
  clip.sample_rate = 16000;
  clip.samples.assign(16000, 0.0);
  FeatureParams p;
  auto m = audio::log_mel<double>(clip, p);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_DOUBLE_EQ(m[i], std::log(1e-6));
}

TEST(LogMel, TenSecondClipShape) {
  Rng rng(77);
  WaveClip clip;
  clip.sample_rate = 16000;
  clip.samples.resize(160000);
  for (auto& s : clip.samples) s = rng.uniform(-0.5, 0.5);
  FeatureParams p;
  auto m = audio::log_mel<float>(clip, p);
  EXPECT_EQ(m.shape(), (Shape{626, 128}));
  EXPECT_TRUE(m.all_finite());
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_GE(m[i], std::log(1e-6f) - 1e-4f);
}

TEST(LogMel, LouderNeverDecreases) {
  Rng rng(78);
  WaveClip soft;
  soft.sample_rate = 16000;
  soft.samples.resize(8000);
  for (auto& s : soft.samples) s = rng.uniform(-0.3, 0.3);
  WaveClip loud = soft;
  for (auto& s : loud.samples) s *= 3.0;
  FeatureParams p;
  auto a = audio::log_mel<double>(soft, p);
  auto b = audio::log_mel<double>(loud, p);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_GE(b[i], a[i]);
}

TEST(Wav, Pcm16RoundTrip) {
  Rng rng(79);
  WaveClip clip;
  clip.sample_rate = 16000;
  clip.samples.resize(4321);
  for (auto& s : clip.samples) s = rng.uniform(-0.99, 0.99);
  auto path = tmp_path("roundtrip.wav");
  write_wav(path, clip);
  auto back = read_wav(path);
  EXPECT_EQ(back.sample_rate, 16000u);
  ASSERT_EQ(back.samples.size(), clip.samples.size());
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    EXPECT_NEAR(back.samples[i], clip.samples[i], 1.0 / 32768.0 + 1e-9);
  }
}

TEST(Wav, StereoDownmixesToAverage) {
  // hand-built stereo PCM16: L = 8192, R = -4096 -> mean 2048/32768
  std::vector<unsigned char> b = {'R', 'I', 'F', 'F', 0, 0, 0, 0, 'W', 'A', 'V', 'E'};
  auto put16 = [&](std::uint16_t v) {
    b.push_back(v & 0xff);
    b.push_back(v >> 8);
  };
  auto put32 = [&](std::uint32_t v) {
    put16(v & 0xffff);
    put16(v >> 16);
  };
  b.insert(b.end(), {'f', 'm', 't', ' '});
  put32(16);
  put16(1);
  put16(2);
  put32(8000);
  put32(8000 * 4);
  put16(4);
  put16(16);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  put32(8);  // two stereo frames
  put16(8192);
  put16(static_cast<std::uint16_t>(-4096));
  put16(8192);
  put16(static_cast<std::uint16_t>(-4096));
  std::size_t riff_len = b.size() - 8;
  b[4] = riff_len & 0xff;
  b[5] = (riff_len >> 8) & 0xff;
  auto path = tmp_path("stereo.wav");
  std::ofstream(path, std::ios::binary)
      .write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  auto clip = read_wav(path);
  EXPECT_EQ(clip.sample_rate, 8000u);
  ASSERT_EQ(clip.samples.size(), 2u);
  EXPECT_NEAR(clip.samples[0], (8192.0 - 4096.0) / 2.0 / 32768.0, 1e-12);
}

TEST(Wav, Float32Read) {
  std::vector<unsigned char> b = {'R', 'I', 'F', 'F', 0, 0, 0, 0, 'W', 'A', 'V', 'E'};
  auto put16 = [&](std::uint16_t v) {
    b.push_back(v & 0xff);
    b.push_back(v >> 8);
  };
  auto put32 = [&](std::uint32_t v) {
    put16(v & 0xffff);
    put16(v >> 16);
  };
  b.insert(b.end(), {'f', 'm', 't', ' '});
  put32(16);
  put16(3);  // IEEE float
  put16(1);
  put32(16000);
  put32(16000 * 4);
  put16(4);
  put16(32);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  put32(8);
  float v0 = 0.25f, v1 = -0.5f;
  std::uint32_t u;
  std::memcpy(&u, &v0, 4);
  put32(u);
  std::memcpy(&u, &v1, 4);
  put32(u);
  std::size_t riff_len = b.size() - 8;
  b[4] = riff_len & 0xff;
  b[5] = (riff_len >> 8) & 0xff;
  auto path = tmp_path("float32.wav");
  std::ofstream(path, std::ios::binary)
      .write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  auto clip = read_wav(path);
  ASSERT_EQ(clip.samples.size(), 2u);
  EXPECT_DOUBLE_EQ(clip.samples[0], 0.25);
  EXPECT_DOUBLE_EQ(clip.samples[1], -0.5);
}

TEST(Wav, MalformedFilesAreIoErrors) {
  auto path = tmp_path("garbage.wav");
  std::ofstream(path, std::ios::binary) << "this is not a wav file at all";
  EXPECT_THROW(read_wav(path), IoError);
  EXPECT_THROW(read_wav(tmp_path("does_not_exist.wav")), IoError);
}
