#include <gtest/gtest.h>

#include <cmath>

#include "ffdconv/errors.hpp"
#include "ffdconv/rng.hpp"
#include "ffdconv/tensor.hpp"

using namespace ffdconv;

TEST(Shape, NumelAndStr) {
  EXPECT_EQ(shape_numel({}), 1u);
  EXPECT_EQ(shape_numel({4}), 4u);
  EXPECT_EQ(shape_numel({2, 3, 4}), 24u);
  EXPECT_EQ(shape_str({2, 3}), "[2,3]");
}

TEST(Tensor, RowMajorIndexing) {
  Tensor<double> t({2, 3, 4, 5});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  // at4(b,c,i,j) must address ((b*3+c)*4+i)*5+j
  EXPECT_EQ(t.at4(0, 0, 0, 0), 0.0);
  EXPECT_EQ(t.at4(0, 0, 0, 4), 4.0);
  EXPECT_EQ(t.at4(0, 0, 1, 0), 5.0);
  EXPECT_EQ(t.at4(0, 1, 0, 0), 20.0);
  EXPECT_EQ(t.at4(1, 0, 0, 0), 60.0);
  EXPECT_EQ(t.at4(1, 2, 3, 4), 119.0);
}

TEST(Tensor, Factories) {
  auto z = Tensor<float>::zeros({3, 3});
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_EQ(z[i], 0.0f);
  auto o = Tensor<float>::ones({2});
  EXPECT_EQ(o[0], 1.0f);
  auto f = Tensor<float>::full({2}, 2.5f);
  EXPECT_EQ(f[1], 2.5f);
  auto s = Tensor<double>::scalar(7.0);
  EXPECT_EQ(s.rank(), 1u);
  EXPECT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0], 7.0);
}

TEST(Tensor, ReshapePreservesDataRejectsBadNumel) {
  Tensor<double> t({2, 3});
  for (std::size_t i = 0; i < 6; ++i) t[i] = static_cast<double>(i);
  auto r = t.reshaped({3, 2});
  EXPECT_EQ(r.dim(0), 3u);
  EXPECT_EQ(r[5], 5.0);
  EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
}

TEST(Tensor, AllocStatsCounts) {
  auto before = AllocStats::snapshot();
  Tensor<double> t({16, 16});
  auto d = AllocStats::since(before);
  EXPECT_EQ(d.allocations, 1u);
  EXPECT_EQ(d.bytes, 16u * 16u * sizeof(double));
}

TEST(Tensor, MaxAbsDiff) {
  Tensor<double> a({3});
  Tensor<double> b({3});
  a[0] = 1;
  a[1] = 2;
  a[2] = 3;
  b[0] = 1;
  b[1] = 2.5;
  b[2] = 3;
  EXPECT_DOUBLE_EQ(max_abs_diff(a, b), 0.5);
}

TEST(Tensor, FiniteCheckThrowsWhenEnabled) {
  bool prev = DebugChecks::enabled();
  DebugChecks::set(true);
  Tensor<double> t({2});
  t[0] = 1.0;
  t[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
  EXPECT_THROW(check_finite(t, "unit"), NumericError);
  t[1] = 0.0;
  EXPECT_NO_THROW(check_finite(t, "unit"));
  DebugChecks::set(prev);
}

TEST(Rng, DeterministicAndBounded) {
  Rng a(1234), b(1234), c(77);
  bool all_equal = true, any_diff_seed_diff = false;
  for (int i = 0; i < 1000; ++i) {
    double va = a.uniform(), vb = b.uniform(), vc = c.uniform();
    EXPECT_GE(va, 0.0);
    EXPECT_LT(va, 1.0);
    if (va != vb) all_equal = false;
    if (va != vc) any_diff_seed_diff = true;
  }
  EXPECT_TRUE(all_equal);
  EXPECT_TRUE(any_diff_seed_diff);
}

TEST(Rng, MomentsSane) {
  Rng r(5);
  const int n = 200000;
  double sum = 0, sum2 = 0;
  for (int i = 0; i < n; ++i) {
    double v = r.uniform();
    sum += v;
    sum2 += v * v;
  }
  double mean = sum / n;
  double var = sum2 / n - mean * mean;
  EXPECT_NEAR(mean, 0.5, 0.01);
  EXPECT_NEAR(var, 1.0 / 12.0, 0.01);

  double nsum = 0, nsum2 = 0;
  for (int i = 0; i < n; ++i) {
    double v = r.normal();
    nsum += v;
    nsum2 += v * v;
  }
  EXPECT_NEAR(nsum / n, 0.0, 0.02);
  EXPECT_NEAR(nsum2 / n, 1.0, 0.05);
}

TEST(Rng, UniformIndexCoversRange) {
  Rng r(9);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) hits[r.uniform_index(7)]++;
  for (int k = 0; k < 7; ++k) EXPECT_GT(hits[k], 700);
}

TEST(Rng, MixSeparatesStreams) {
  Rng a(Rng::mix(42, 0)), b(Rng::mix(42, 1));
  EXPECT_NE(a.uniform(), b.uniform());
}

TEST(Tensor, FillUniformRange) {
  Rng r(3);
  Tensor<float> t({1000});
  t.fill_uniform(r, -2.0f, 2.0f);
  float lo = 1e9f, hi = -1e9f;
  for (std::size_t i = 0; i < t.size(); ++i) {
    lo = std::min(lo, t[i]);
    hi = std::max(hi, t[i]);
  }
  EXPECT_GE(lo, -2.0f);
  EXPECT_LT(hi, 2.0f);
  EXPECT_LT(lo, -1.5f);
  EXPECT_GT(hi, 1.5f);
}
