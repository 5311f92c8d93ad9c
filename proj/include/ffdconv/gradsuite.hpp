#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ffdconv/autograd.hpp"
#include "ffdconv/conv.hpp"
#include "ffdconv/ddf.hpp"
#include "ffdconv/filter_gen.hpp"
#include "ffdconv/gradcheck.hpp"
#include "ffdconv/gru.hpp"
#include "ffdconv/model.hpp"
#include "ffdconv/ops.hpp"
#include "ffdconv/rng.hpp"
#include "ffdconv/tensor.hpp"
#include "ffdconv/train.hpp"

namespace ffdconv {

// Randomized finite-difference verification across the differentiable building
// blocks, shared by the command line and the test suite. All checks run in
// double precision with central differences.
struct GradSuiteEntry {
  std::string op;
  std::size_t instances = 0;
  std::size_t coords = 0;
  double max_rel = 0.0;
  bool ok = true;
  std::string worst;

  void absorb(const GradCheckResult<double>& r) {
    ++instances;
    coords += r.coords_checked;
    if (r.max_rel > max_rel) {
      max_rel = r.max_rel;
      worst = r.worst;
    }
    ok = ok && r.ok;
  }
};

namespace gradsuite_detail {

inline Tensor<double> uniform(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  t.fill_uniform(rng, lo, hi);
  return t;
}

inline GradCheckResult<double> conv2d_case(Rng& rng, std::size_t i) {
  const std::size_t B = 1 + i % 2, C = 1 + i % 3, Co = 1 + (i + 1) % 3;
  const std::size_t T = 4 + i % 3, F = 4 + (i + 1) % 3;
  const std::size_t k = i % 2 == 0 ? 3 : 1;
  std::vector<Tensor<double>> in = {uniform(rng, {B, C, T, F}), uniform(rng, {Co, C, k, k}),
                                    uniform(rng, {Co})};
  auto build = [&](Tape<double>& tape, const std::vector<Var>& v) {
    return projection_loss(tape, conv2d_same(tape, v[0], v[1], v[2]), 17 + i);
  };
  return check_gradients<double>(build, std::move(in), rng);
}

inline GradCheckResult<double> linear_case(Rng& rng, std::size_t i) {
  const std::size_t B = 2 + i % 3, N = 2 + i % 4, M = 1 + (i + 2) % 4;
  std::vector<Tensor<double>> in = {uniform(rng, {B, N}), uniform(rng, {M, N}), uniform(rng, {M})};
  auto build = [&](Tape<double>& tape, const std::vector<Var>& v) {
    return projection_loss(tape, linear(tape, v[0], v[1], v[2]), 23 + i);
  };
  return check_gradients<double>(build, std::move(in), rng);
}

inline GradCheckResult<double> softmax_case(Rng& rng, std::size_t i) {
  const std::size_t B = 2 + i % 2, N = 3 + i % 5;
  const std::size_t axis = i % 2;
  std::vector<Tensor<double>> in = {uniform(rng, {B, N}, -2.0, 2.0)};
  auto build = [&](Tape<double>& tape, const std::vector<Var>& v) {
    return projection_loss(tape, softmax(tape, v[0], axis), 29 + i);
  };
  return check_gradients<double>(build, std::move(in), rng);
}

inline GradCheckResult<double> pool_case(Rng& rng, std::size_t i, PoolMode mode) {
  const std::size_t B = 1 + i % 2, C = 1 + i % 2;
  const std::size_t T = 5 + i % 4, F = 5 + (i + 1) % 4;
  const std::size_t w = 2 + i % 2;
  std::vector<Tensor<double>> in = {uniform(rng, {B, C, T, F})};
  auto build = [&](Tape<double>& tape, const std::vector<Var>& v) {
    return projection_loss(tape, pool2d(tape, v[0], mode, w, w), 31 + i);
  };
  return check_gradients<double>(build, std::move(in), rng);
}

inline GradCheckResult<double> gru_case(Rng& rng, std::size_t i) {
  const std::size_t B = 1 + i % 2, T = 2 + i % 3, N = 2 + i % 2, H = 2 + (i + 1) % 2;
  const bool reverse = i % 2 == 1;
  std::vector<Tensor<double>> in = {uniform(rng, {B, T, N})};
  for (int j = 0; j < 3; ++j) in.push_back(uniform(rng, {H, N}));
  for (int j = 0; j < 3; ++j) in.push_back(uniform(rng, {H, H}));
  for (int j = 0; j < 3; ++j) in.push_back(uniform(rng, {H}, -0.5, 0.5));
  auto build = [&](Tape<double>& tape, const std::vector<Var>& v) {
    GruVars g{v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9]};
    return projection_loss(tape, gru_forward(tape, g, v[0], reverse), 37 + i);
  };
  return check_gradients<double>(build, std::move(in), rng);
}

inline GradCheckResult<double> ddf_case(Rng& rng, std::size_t i, DdfAxis axis) {
  const std::size_t B = 1 + i % 2, C = 2 + i % 2, T = 3 + i % 3, F = 3 + (i + 1) % 3;
  const std::size_t k = i % 2 == 0 ? 3 : 1;
  const std::size_t L = ddf_positions(axis, T, F);
  std::vector<Tensor<double>> in = {uniform(rng, {B, C, T, F}), uniform(rng, {B, L, k * k}),
                                    uniform(rng, {B, C, k * k})};
  auto build = [&](Tape<double>& tape, const std::vector<Var>& v) {
    return projection_loss(tape, ddf(tape, v[0], v[1], v[2], axis), 41 + i);
  };
  return check_gradients<double>(build, std::move(in), rng);
}

inline GradCheckResult<double> spatial_gen_case(Rng& rng, std::size_t i) {
  const DdfAxis axis = static_cast<DdfAxis>(i % 3);
  const std::size_t B = 1 + i % 2, C = 2, T = 4, F = 5;
  const std::size_t k = 3, W = i % 2 == 0 ? 3 : 1;
  const bool attention = i % 3 != 2;
  Shape wshape;
  switch (axis) {
    case DdfAxis::kFreq: wshape = {k * k, C, T, W}; break;
    case DdfAxis::kTime: wshape = {k * k, C, W, F}; break;
    case DdfAxis::kPixel: wshape = {k * k, C, 1, 1}; break;
  }
  // Generator weights away from zero keep the normalized rows well away from
  // the constant-row regime, where the inverse-sigma curvature would dominate
  // the finite-difference truncation error.
  std::vector<Tensor<double>> in = {uniform(rng, {B, C, T, F}), uniform(rng, wshape, -0.6, 0.6),
                                    uniform(rng, {k * k}, -0.3, 0.3),
                                    uniform(rng, {1}, 0.5, 1.5)};
  auto build = [&](Tape<double>& tape, const std::vector<Var>& v) {
    Var f = spatial_filters(tape, v[0], v[1], v[2], axis, attention, 1.0 + 0.5 * (i % 2), v[3]);
    return projection_loss(tape, f, 43 + i);
  };
  return check_gradients<double>(build, std::move(in), rng);
}

inline GradCheckResult<double> channel_gen_case(Rng& rng, std::size_t i) {
  const std::size_t B = 1 + i % 2, C = 2 + i % 3, T = 3, F = 4;
  const std::size_t k = i % 2 == 0 ? 3 : 5;  // normalized rows need length >= 2
  const std::size_t H = 1 + i % 2;
  std::vector<Tensor<double>> in = {uniform(rng, {B, C, T, F}), uniform(rng, {H, C}),
                                    uniform(rng, {H}, 0.25, 0.75),
                                    uniform(rng, {C * k * k, H}),
                                    uniform(rng, {C * k * k}, -0.3, 0.3),
                                    uniform(rng, {1}, 0.5, 1.5)};
  auto build = [&](Tape<double>& tape, const std::vector<Var>& v) {
    Var f = channel_filters(tape, v[0], v[1], v[2], v[3], v[4], v[5]);
    return projection_loss(tape, f, 47 + i);
  };
  return check_gradients<double>(build, std::move(in), rng);
}

inline GradCheckResult<double> model_case(Rng& rng, std::size_t i) {
  ModelConfig cfg;
  cfg.variant = std::vector<std::string>{"ffd", "ftd", "ddf"}[i % 3];
  cfg.n_classes = 2;
  cfg.frames = 8;
  cfg.bands = 6;
  cfg.channels = {2, 3};
  cfg.time_pool = {2, 1};
  cfg.freq_pool = {2, 2};
  cfg.kernel = 3;
  cfg.window = 3;
  cfg.use_attention = i % 2 == 0;
  cfg.gru_hidden = 3;
  cfg.gru_layers = 1;
  cfg.act = Activation::kGlu;  // smooth activation for finite differences
  SedModel<double> model = make_sed_model<double>(cfg, 1000 + i);

  // Push the filter generators away from near-constant outputs (see above).
  for (auto& block : model.blocks) {
    if (block.cfg.kind != BlockKind::kDynamic) continue;
    block.cgen.w2->value.fill_uniform(rng, -1.0, 1.0);
    block.cgen.b1->value.fill(0.5);
    block.sgen.weight->value.fill_uniform(rng, -0.5, 0.5);
  }

  const std::size_t t_out = model_output_frames(cfg);
  Tensor<double> x = uniform(rng, {2, 1, cfg.frames, cfg.bands});
  Tensor<double> ys({2, t_out, cfg.n_classes});
  Tensor<double> yw({2, cfg.n_classes});
  for (std::size_t j = 0; j < ys.size(); ++j) ys[j] = rng.uniform() < 0.5 ? 0.0 : 1.0;
  for (std::size_t j = 0; j < yw.size(); ++j) yw[j] = rng.uniform() < 0.5 ? 0.0 : 1.0;

  auto build = [&](Tape<double>& tape) {
    ModelOutput<double> out = model_forward(tape, model, tape.constant(x), /*training=*/false);
    return add(tape, bce_loss(tape, out.strong, tape.constant(ys)),
               scale(tape, bce_loss(tape, out.weak, tape.constant(yw)), 0.5));
  };
  return check_param_gradients<double>(build, model.store, rng, 1e-5, 1e-6,
                                       /*max_coords_per_param=*/2);
}

}  // namespace gradsuite_detail

inline std::vector<std::string> gradient_suite_ops() {
  return {"conv2d",   "linear",   "softmax",   "pool_avg",    "pool_max",    "gru",
          "ddf_freq", "ddf_time", "ddf_pixel", "spatial_gen", "channel_gen", "model"};
}

// Runs `instances` random cases per op. Entries report the worst relative
// error seen anywhere; `ok` requires every sampled coordinate under tolerance.
inline std::vector<GradSuiteEntry> run_gradient_suite(std::size_t instances, std::uint64_t seed) {
  namespace d = gradsuite_detail;
  std::vector<GradSuiteEntry> out;
  auto run = [&](const std::string& name, auto&& fn) {
    Rng rng(Rng::mix(seed, std::hash<std::string>{}(name)));
    GradSuiteEntry e;
    e.op = name;
    for (std::size_t i = 0; i < instances; ++i) e.absorb(fn(rng, i));
    out.push_back(std::move(e));
  };
  run("conv2d", [](Rng& r, std::size_t i) { return d::conv2d_case(r, i); });
  run("linear", [](Rng& r, std::size_t i) { return d::linear_case(r, i); });
  run("softmax", [](Rng& r, std::size_t i) { return d::softmax_case(r, i); });
  run("pool_avg", [](Rng& r, std::size_t i) { return d::pool_case(r, i, PoolMode::kAvg); });
  run("pool_max", [](Rng& r, std::size_t i) { return d::pool_case(r, i, PoolMode::kMax); });
  run("gru", [](Rng& r, std::size_t i) { return d::gru_case(r, i); });
  run("ddf_freq", [](Rng& r, std::size_t i) { return d::ddf_case(r, i, DdfAxis::kFreq); });
  run("ddf_time", [](Rng& r, std::size_t i) { return d::ddf_case(r, i, DdfAxis::kTime); });
  run("ddf_pixel", [](Rng& r, std::size_t i) { return d::ddf_case(r, i, DdfAxis::kPixel); });
  run("spatial_gen", [](Rng& r, std::size_t i) { return d::spatial_gen_case(r, i); });
  run("channel_gen", [](Rng& r, std::size_t i) { return d::channel_gen_case(r, i); });
  run("model", [](Rng& r, std::size_t i) { return d::model_case(r, i); });
  return out;
}

}  // namespace ffdconv
