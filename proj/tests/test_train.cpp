#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "ffdconv/ffdconv.hpp"

namespace ffdconv {
namespace {

TEST(BceLoss, HandValues) {
  Tape<double> tape;
  Tensor<double> p({2});
  p[0] = 0.8;
  p[1] = 0.3;
  Tensor<double> y({2});
  y[0] = 1.0;
  y[1] = 0.0;
  Var loss = bce_loss(tape, tape.constant(p), tape.constant(y));
  const double expect = -0.5 * (std::log(0.8) + std::log(0.7));
  EXPECT_NEAR(tape.value(loss)[0], expect, 1e-15);

  // Perfect and fully-wrong predictions under the clamp stay finite.
  Tensor<double> extreme({2});
  extreme[0] = 1.0;
  extreme[1] = 0.0;
  Tape<double> tape2;
  Var l2 = bce_loss(tape2, tape2.constant(extreme), tape2.constant(y));
  EXPECT_NEAR(tape2.value(l2)[0], 0.0, 1e-6);
  Tensor<double> wrong({2});
  wrong[0] = 0.0;
  wrong[1] = 1.0;
  Tape<double> tape3;
  Var l3 = bce_loss(tape3, tape3.constant(wrong), tape3.constant(y));
  EXPECT_TRUE(std::isfinite(tape3.value(l3)[0]));
  EXPECT_NEAR(tape3.value(l3)[0], -std::log(1e-7), 1e-6);
}

TEST(BceLoss, ShapeValidation) {
  Tape<double> tape;
  Var a = tape.constant(Tensor<double>::full({2, 3}, 0.5));
  Var b = tape.constant(Tensor<double>::full({3, 2}, 1.0));
  EXPECT_THROW(bce_loss(tape, a, b), ShapeError);
}

TEST(BceLossGrad, MatchesFiniteDifferences) {
  Rng rng(901);
  Tensor<double> p({3, 4});
  p.fill_uniform(rng, 0.05, 0.95);
  Tensor<double> y({3, 4});
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
  auto build = [&](Tape<double>& tape, const std::vector<Var>& in) {
    return bce_loss(tape, in[0], tape.constant(y));
  };
  auto res = check_gradients<double>(build, {p}, rng, 1e-5, 1e-6, 12);
  EXPECT_TRUE(res.ok) << res.worst;

  // Target-side gradient as well (probabilities away from the clamp).
  auto build2 = [&](Tape<double>& tape, const std::vector<Var>& in) {
    return bce_loss(tape, tape.constant(p), in[0]);
  };
  Tensor<double> ysoft({3, 4});
  ysoft.fill_uniform(rng, 0.1, 0.9);
  auto res2 = check_gradients<double>(build2, {ysoft}, rng, 1e-5, 1e-6, 12);
  EXPECT_TRUE(res2.ok) << res2.worst;
}

TEST(AdamOpt, HandComputedSteps) {
  ParamStore<double> store;
  Parameter<double>& w = store.add("w", Tensor<double>::full({1}, 0.5));
  AdamConfig cfg;
  cfg.lr = 0.1;
  Adam<double> opt(store, cfg);

  // With a constant gradient the bias-corrected update is lr * g / (|g| + eps)
  // on every step: m_hat = g and v_hat = g * g identically.
  w.grad[0] = 0.2;
  opt.step(store);
  const double delta = 0.1 * 0.2 / (0.2 + 1e-8);
  EXPECT_NEAR(w.value[0], 0.5 - delta, 1e-12);
  w.grad[0] = 0.2;
  opt.step(store);
  EXPECT_NEAR(w.value[0], 0.5 - 2 * delta, 1e-12);
  EXPECT_EQ(opt.steps(), 2u);
}

TEST(AdamOpt, RespectsScaleAndTrainability) {
  ParamStore<double> store;
  Parameter<double>& w = store.add("w", Tensor<double>::full({1}, 1.0));
  Parameter<double>& buf = store.add("buf", Tensor<double>::full({1}, 1.0), /*trainable=*/false);
  AdamConfig cfg;
  cfg.lr = 0.1;
  Adam<double> opt(store, cfg);
  w.grad[0] = 1.0;
  buf.grad[0] = 1.0;
  opt.step(store, 0.5);
  EXPECT_NEAR(w.value[0], 1.0 - 0.5 * 0.1 * 1.0 / (1.0 + 1e-8), 1e-12);
  EXPECT_EQ(buf.value[0], 1.0);

  ParamStore<double> fewer;
  fewer.add("w", Tensor<double>::full({1}, 1.0));
  EXPECT_THROW(opt.step(fewer), ConfigError);

  ParamStore<double> reshaped;
  reshaped.add("w", Tensor<double>::full({2}, 1.0));
  reshaped.add("buf", Tensor<double>::full({1}, 1.0), /*trainable=*/false);
  EXPECT_THROW(opt.step(reshaped), ConfigError);
}

TEST(Schedules, WarmupRamp) {
  EXPECT_NEAR(warmup_scale(0, 5), std::exp(-5.0), 1e-15);
  EXPECT_NEAR(warmup_scale(2, 5), std::exp(-1.8), 1e-15);
  EXPECT_DOUBLE_EQ(warmup_scale(5, 5), 1.0);
  EXPECT_DOUBLE_EQ(warmup_scale(9, 5), 1.0);
  EXPECT_DOUBLE_EQ(warmup_scale(0, 0), 1.0);
  EXPECT_LT(warmup_scale(1, 5), warmup_scale(2, 5));
}

TEST(Schedules, TemperatureAnneal) {
  EXPECT_DOUBLE_EQ(temperature_at(0, 30.0, 10), 30.0);
  EXPECT_DOUBLE_EQ(temperature_at(5, 30.0, 10), 15.5);
  EXPECT_DOUBLE_EQ(temperature_at(10, 30.0, 10), 1.0);
  EXPECT_DOUBLE_EQ(temperature_at(3, 30.0, 0), 1.0);
}

SyntheticSpec tiny_spec() {
  SyntheticSpec spec;
  spec.n_classes = 2;
  spec.frames = 16;
  spec.bands = 8;
  spec.label_frames = 8;
  spec.clip_seconds = 4.0;
  spec.min_events = 1;
  spec.max_events = 2;
  spec.min_len = 2;
  spec.max_len = 5;
  return spec;
}

ModelConfig tiny_model_config() {
  ModelConfig cfg;
  cfg.variant = "static";
  cfg.n_classes = 2;
  cfg.frames = 16;
  cfg.bands = 8;
  cfg.channels = {4};
  cfg.time_pool = {2};
  cfg.freq_pool = {2};
  cfg.gru_hidden = 4;
  cfg.gru_layers = 1;
  return cfg;
}

TEST(TrainLoop, LossDecreasesAndIsDeterministic) {
  SyntheticSpec spec = tiny_spec();
  auto train_ds = synth_dataset<double>(spec, 24, 7);
  auto val_ds = synth_dataset<double>(spec, 8, 8);

  TrainConfig tc;
  tc.epochs = 4;
  tc.batch_size = 8;
  tc.adam.lr = 3e-3;
  tc.warmup_epochs = 0;
  tc.median_len = 3;
  tc.seed = 5;

  auto run = [&]() {
    SedModel<double> model = make_sed_model<double>(tiny_model_config(), 99);
    return train_loop(model, train_ds, val_ds, tc);
  };
  TrainResult a = run();
  ASSERT_EQ(a.history.size(), 4u);
  for (const EpochStats& s : a.history) {
    EXPECT_TRUE(std::isfinite(s.loss));
    EXPECT_GE(s.eb_f1, 0.0);
    EXPECT_LE(s.eb_f1, 1.0);
  }
  EXPECT_LT(a.history.back().loss, a.history.front().loss);

  TrainResult b = run();
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    EXPECT_EQ(a.history[e].loss, b.history[e].loss) << "epoch " << e;
    EXPECT_EQ(a.history[e].eb_f1, b.history[e].eb_f1);
    EXPECT_EQ(a.history[e].ib_f1, b.history[e].ib_f1);
  }
}

TEST(TrainLoop, WritesMetricsCsv) {
  SyntheticSpec spec = tiny_spec();
  auto train_ds = synth_dataset<double>(spec, 8, 17);
  auto val_ds = synth_dataset<double>(spec, 4, 18);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.warmup_epochs = 1;
  tc.median_len = 3;

  const std::string path = std::string(::testing::TempDir()) + "/metrics.csv";
  SedModel<double> model = make_sed_model<double>(tiny_model_config(), 3);
  TrainResult res = train_loop(model, train_ds, val_ds, tc, nullptr, path);

  std::ifstream in(path);
  ASSERT_TRUE(in.good());
  std::string line;
  ASSERT_TRUE(std::getline(in, line));
  EXPECT_EQ(line, "epoch,loss,eb_f1,ib_f1");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string field;
    std::size_t cols = 0;
    while (std::getline(ls, field, ',')) {
      EXPECT_FALSE(field.empty());
      ++cols;
    }
    EXPECT_EQ(cols, 4u);
    ++rows;
  }
  EXPECT_EQ(rows, res.history.size());
  std::remove(path.c_str());
}

TEST(TrainLoop, ValidatesConfiguration) {
  SyntheticSpec spec = tiny_spec();
  auto ds = synth_dataset<double>(spec, 4, 1);
  SedModel<double> model = make_sed_model<double>(tiny_model_config(), 1);
  TrainConfig tc;
  tc.epochs = 0;
  EXPECT_THROW(train_loop(model, ds, ds, tc), ConfigError);

  SyntheticSpec wrong = spec;
  wrong.bands = 16;
  wrong.n_classes = 2;
  auto bad = synth_dataset<double>(wrong, 4, 1);
  TrainConfig ok;
  ok.epochs = 1;
  EXPECT_THROW(train_loop(model, bad, bad, ok), ConfigError);
}

TEST(Evaluate, CountsCoverAllReferenceEvents) {
  SyntheticSpec spec = tiny_spec();
  auto ds = synth_dataset<double>(spec, 6, 9);
  SedModel<double> model = make_sed_model<double>(tiny_model_config(), 2);
  EvalResult ev = evaluate(model, ds, 4, 3, 0.5);
  std::size_t total_events = 0;
  for (const auto& clip : ds.clips) total_events += clip.events.size();
  EXPECT_EQ(ev.eb_counts.tp + ev.eb_counts.fn, total_events);
  EXPECT_EQ(ev.ib_counts.tp + ev.ib_counts.fn, total_events);
}

}  // namespace
}  // namespace ffdconv
