#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "ffdconv/ffdconv.hpp"

namespace ffdconv {
namespace {

// Independent reference: materialize each replicated-edge window and sort.
std::vector<double> median_brute(const std::vector<double>& x, std::size_t len) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  const auto half = static_cast<std::ptrdiff_t>(len / 2);
  std::vector<double> out(x.size());
  for (std::ptrdiff_t t = 0; t < n; ++t) {
    std::vector<double> w;
    for (std::ptrdiff_t k = t - half; k <= t + half; ++k) {
      w.push_back(x[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(k, 0, n - 1))]);
    }
    std::sort(w.begin(), w.end());
    out[static_cast<std::size_t>(t)] = w[len / 2];
  }
  return out;
}

TEST(Median, HandExample) {
  std::vector<double> x = {0, 1, 0, 1, 1, 1, 0};
  std::vector<double> expect = {0, 0, 1, 1, 1, 1, 0};
  EXPECT_EQ(median_filter(x, 3), expect);
}

TEST(Median, LengthValidation) {
  std::vector<double> x = {1, 2, 3};
  EXPECT_THROW(median_filter(x, 2), ConfigError);
  EXPECT_THROW(median_filter(x, 0), ConfigError);
  EXPECT_EQ(median_filter(x, 1), x);
}

TEST(Median, MatchesBruteForceOnRandomBinarySequences) {
  Rng rng(61);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(40);
    std::vector<double> x(n);
    for (auto& v : x) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    const std::size_t len = 3 + 2 * rng.uniform_index(3);  // 3, 5, or 7
    ASSERT_EQ(median_filter(x, len), median_brute(x, len)) << "trial " << trial;
  }
}

TEST(Median, RepeatedFilteringReachesFixedPoint) {
  // A single pass is not idempotent (e.g. 01010 -> 00100 -> 00000), but
  // iterating a window-3 median on a finite sequence converges to a root
  // signal that further passes leave unchanged.
  Rng rng(62);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(1 + rng.uniform_index(30));
    for (auto& v : x) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    bool fixed = false;
    for (std::size_t pass = 0; pass <= x.size(); ++pass) {
      std::vector<double> next = median_filter(x, 3);
      if (next == x) {
        fixed = true;
        break;
      }
      x = std::move(next);
    }
    EXPECT_TRUE(fixed) << "trial " << trial;
  }
}

TEST(Median, ColumnsFilterIndependently) {
  Tensor<double> probs({7, 2});
  const double a[7] = {0, 1, 0, 1, 1, 1, 0};
  const double b[7] = {1, 1, 0, 0, 0, 1, 1};
  for (int t = 0; t < 7; ++t) {
    probs.at2(t, 0) = a[t];
    probs.at2(t, 1) = b[t];
  }
  Tensor<double> out = median_filter_probs(probs, 3);
  const double ea[7] = {0, 0, 1, 1, 1, 1, 0};
  const double eb[7] = {1, 1, 0, 0, 0, 1, 1};
  for (int t = 0; t < 7; ++t) {
    EXPECT_EQ(out.at2(t, 0), ea[t]);
    EXPECT_EQ(out.at2(t, 1), eb[t]);
  }
}

TEST(Decode, MergesConsecutiveFrames) {
  const double hop = 0.064;
  Tensor<double> probs = Tensor<double>::zeros({30, 2});
  for (int t = 10; t < 20; ++t) probs.at2(t, 0) = 1.0;
  for (int t = 0; t < 30; ++t) probs.at2(t, 1) = 1.0;
  EventList ev = decode_events(probs, 0.5, hop);
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_EQ(ev[0].label, 1u);
  EXPECT_DOUBLE_EQ(ev[0].onset, 0.0);
  EXPECT_DOUBLE_EQ(ev[0].offset, 30 * hop);
  EXPECT_EQ(ev[1].label, 0u);
  EXPECT_DOUBLE_EQ(ev[1].onset, 0.64);
  EXPECT_DOUBLE_EQ(ev[1].offset, 1.28);
}

TEST(Decode, ThresholdIsInclusive) {
  Tensor<double> probs = Tensor<double>::full({3, 1}, 0.5);
  EventList ev = decode_events(probs, 0.5, 1.0);
  ASSERT_EQ(ev.size(), 1u);
  EventList none = decode_events(probs, 0.5 + 1e-9, 1.0);
  EXPECT_TRUE(none.empty());
}

TEST(Decode, PerClassThresholds) {
  Tensor<double> probs = Tensor<double>::full({4, 2}, 0.6);
  EventList ev = decode_events(probs, std::vector<double>{0.5, 0.7}, 0.5);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].label, 0u);
}

TEST(Decode, RasterizeRoundTripOnGridAlignedEvents) {
  Rng rng(63);
  const double hop = 0.25;
  const std::size_t frames = 40, classes = 3;
  for (int trial = 0; trial < 50; ++trial) {
    EventList events;
    for (std::size_t c = 0; c < classes; ++c) {
      std::size_t t = rng.uniform_index(8);
      while (t + 2 < frames) {
        std::size_t len = 1 + rng.uniform_index(6);
        std::size_t end = std::min(frames, t + len);
        events.push_back({c, t * hop, end * hop});
        t = end + 1 + rng.uniform_index(8);  // gap of at least one frame
      }
    }
    std::sort(events.begin(), events.end(), event_order);
    Tensor<double> grid = rasterize_events<double>(events, frames, classes, hop);
    EventList back = decode_events(grid, 0.5, hop);
    ASSERT_EQ(back.size(), events.size()) << "trial " << trial;
    for (std::size_t i = 0; i < events.size(); ++i) {
      EXPECT_EQ(back[i].label, events[i].label);
      EXPECT_NEAR(back[i].onset, events[i].onset, 1e-12);
      EXPECT_NEAR(back[i].offset, events[i].offset, 1e-12);
    }
  }
}

TEST(Decode, WeakLabels) {
  EventList events = {{0, 0.0, 1.0}, {2, 3.0, 4.0}};
  auto weak = weak_labels_from_events<double>(events, 4);
  EXPECT_EQ(weak, (std::vector<double>{1, 0, 1, 0}));
}

TEST(EventBased, IdenticalLists) {
  EventList ev = {{0, 0.0, 1.0}, {1, 2.0, 3.5}};
  PrfResult r = eb_f1(ev, ev);
  EXPECT_DOUBLE_EQ(r.precision, 1.0);
  EXPECT_DOUBLE_EQ(r.recall, 1.0);
  EXPECT_DOUBLE_EQ(r.f1, 1.0);
}

TEST(EventBased, EmptyCases) {
  EventList ev = {{0, 0.0, 1.0}};
  EXPECT_DOUBLE_EQ(eb_f1({}, ev).f1, 0.0);
  EXPECT_DOUBLE_EQ(eb_f1(ev, {}).f1, 0.0);
  EXPECT_DOUBLE_EQ(eb_f1({}, {}).f1, 1.0);
}

TEST(EventBased, CollarBoundaries) {
  EventList gt = {{0, 0.0, 2.0}};  // duration 2 -> offset tolerance max(0.2, 0.4)
  EXPECT_DOUBLE_EQ(eb_f1({{0, 0.15, 2.35}}, gt).f1, 1.0);
  EXPECT_DOUBLE_EQ(eb_f1({{0, 0.25, 2.0}}, gt).f1, 0.0);   // onset outside collar
  EXPECT_DOUBLE_EQ(eb_f1({{0, 0.0, 2.45}}, gt).f1, 0.0);   // offset outside 0.4
  EXPECT_DOUBLE_EQ(eb_f1({{1, 0.0, 2.0}}, gt).f1, 0.0);    // wrong class
  EventList shortg = {{0, 0.0, 0.5}};  // duration 0.5 -> tolerance stays at the collar
  EXPECT_DOUBLE_EQ(eb_f1({{0, 0.0, 0.69}}, shortg).f1, 1.0);
  EXPECT_DOUBLE_EQ(eb_f1({{0, 0.0, 0.71}}, shortg).f1, 0.0);
}

TEST(EventBased, GreedyOneToOne) {
  EventList gt = {{0, 0.0, 1.0}};
  EventList pred = {{0, 0.0, 1.0}, {0, 0.1, 1.1}};
  PrfCounts c = eb_counts(pred, gt);
  EXPECT_EQ(c.tp, 1u);
  EXPECT_EQ(c.fp, 1u);
  EXPECT_EQ(c.fn, 0u);
  PrfResult r = prf_from_counts(c);
  EXPECT_DOUBLE_EQ(r.precision, 0.5);
  EXPECT_DOUBLE_EQ(r.recall, 1.0);
  EXPECT_NEAR(r.f1, 2.0 / 3.0, 1e-12);
}

TEST(IntersectionBased, WorkedExample) {
  // Half of the prediction overlaps the reference, and half of the reference
  // is covered: both ratios sit exactly at the 0.5 criteria.
  EventList pred = {{0, 0.0, 1.0}};
  EventList gt = {{0, 0.5, 1.5}};
  PrfCounts c = ib_counts(pred, gt, 0.5, 0.5);
  EXPECT_EQ(c.tp, 1u);
  EXPECT_EQ(c.fp, 0u);
  EXPECT_EQ(c.fn, 0u);
  EXPECT_DOUBLE_EQ(ib_f1(pred, gt).f1, 1.0);
}

TEST(IntersectionBased, RejectsLowOverlap) {
  EventList pred = {{0, 0.0, 1.0}};
  EventList gt = {{0, 0.9, 1.9}};  // intersection 0.1 of duration 1.0
  PrfCounts c = ib_counts(pred, gt);
  EXPECT_EQ(c.tp, 0u);
  EXPECT_EQ(c.fp, 1u);
  EXPECT_EQ(c.fn, 1u);
  EXPECT_DOUBLE_EQ(ib_f1(pred, gt).f1, 0.0);
}

TEST(IntersectionBased, FragmentedPredictionsPoolCoverage) {
  EventList gt = {{0, 0.0, 2.0}};
  EventList pred = {{0, 0.0, 0.5}, {0, 0.5, 1.0}};  // jointly cover half of gt
  PrfCounts c = ib_counts(pred, gt, 0.5, 0.5);
  EXPECT_EQ(c.tp, 1u);
  EXPECT_EQ(c.fp, 0u);
  EXPECT_EQ(c.fn, 0u);

  EventList sparse = {{0, 0.0, 0.5}};  // covers only a quarter
  PrfCounts c2 = ib_counts(sparse, gt, 0.5, 0.5);
  EXPECT_EQ(c2.tp, 0u);
  EXPECT_EQ(c2.fn, 1u);
  EXPECT_EQ(c2.fp, 0u);  // the prediction itself is fully inside the reference
}

TEST(IntersectionBased, ClassesPoolMicro) {
  EventList pred = {{0, 0.0, 1.0}, {1, 5.0, 6.0}};
  EventList gt = {{0, 0.0, 1.0}, {1, 0.0, 1.0}};
  PrfCounts c = ib_counts(pred, gt);
  EXPECT_EQ(c.tp, 1u);  // class 0 matches
  EXPECT_EQ(c.fp, 1u);  // class 1 prediction overlaps nothing
  EXPECT_EQ(c.fn, 1u);  // class 1 reference missed
}

TEST(Prf, UndefinedRatiosScoreZero) {
  PrfResult r = prf_from_counts({0, 3, 0});
  EXPECT_DOUBLE_EQ(r.precision, 0.0);
  EXPECT_DOUBLE_EQ(r.recall, 0.0);
  EXPECT_DOUBLE_EQ(r.f1, 0.0);
}

TEST(Tsv, RoundTrip) {
  std::vector<AnnotationRow> rows = {{"a.wav", 0.5, 1.25, "class0"},
                                     {"b.wav", 0.0, 10.0, "class2"}};
  const std::string path = std::string(::testing::TempDir()) + "/events.tsv";
  write_events_tsv(path, rows);
  auto back = read_events_tsv(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].filename, "a.wav");
  EXPECT_DOUBLE_EQ(back[0].onset, 0.5);
  EXPECT_DOUBLE_EQ(back[0].offset, 1.25);
  EXPECT_EQ(back[0].label, "class0");
  EXPECT_EQ(back[1].label, "class2");
  EXPECT_EQ(class_id_from_label(back[1].label), 2u);
  std::remove(path.c_str());
}

TEST(Tsv, MalformedInput) {
  EXPECT_THROW(parse_events_tsv("a.wav\t0.5\t1.0\n"), IoError);        // 3 columns
  EXPECT_THROW(parse_events_tsv("a.wav\tx\t1.0\tclass0\n"), IoError);  // bad number
  EXPECT_THROW(class_id_from_label("dog"), ConfigError);
  EXPECT_TRUE(parse_events_tsv(std::string(kTsvHeader) + "\n").empty());
}

}  // namespace
}  // namespace ffdconv
