#pragma once

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "ffdconv/benchmark.hpp"
#include "ffdconv/dataset_io.hpp"
#include "ffdconv/ffdconv.hpp"
#include "ffdconv/gradsuite.hpp"

namespace ffdconv {
namespace cli {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitNumeric = 3;

struct Options {
  std::string config;
  std::string out;
  std::string data;
  std::string model_path;
  std::string input;
  std::string dtype = "f64";
  std::string variant;
  std::string attention;
  std::string axis = "freq";
  std::uint64_t seed = 0;
  long window = 0;  // 0 keeps the configured value
  long epochs = 0;
  long train_clips = 0;
  long val_clips = 0;
  long instances = 20;
  long median_len = 0;
  double threshold = -1.0;  // negative keeps the configured value
  long batch = 4;
  long channels = 64;
  long frames = 156;
  long bands = 16;
  long kernel = 3;
  long iters = 5;
  int threads = 0;
  bool quiet = false;
};

inline io::KvMap load_config_file(const std::string& path) {
  if (path.empty()) return {};
  return io::parse_kv(io::read_file(path));
}

// Returns `base` with every entry of `over` written on top.
inline io::KvMap overlay(io::KvMap base, const io::KvMap& over) {
  for (const auto& [k, v] : over) base[k] = v;
  return base;
}

inline std::size_t kv_size(const io::KvMap& kv, const char* key, std::size_t fallback) {
  long v = io::kv_long(kv, key, static_cast<long>(fallback));
  if (v < 0) throw ConfigError(std::string("negative value for ") + key);
  return static_cast<std::size_t>(v);
}

inline FeatureParams feature_params_from_kv(const io::KvMap& kv) {
  FeatureParams p;
  p.n_fft = kv_size(kv, "feat.n_fft", p.n_fft);
  p.hop = kv_size(kv, "feat.hop", p.hop);
  p.n_mels = kv_size(kv, "feat.n_mels", p.n_mels);
  p.fmin = io::kv_double(kv, "feat.fmin", p.fmin);
  p.fmax = io::kv_double(kv, "feat.fmax", p.fmax);
  p.log_floor = io::kv_double(kv, "feat.log_floor", p.log_floor);
  return p;
}

// Model configuration: benchmark defaults, overlaid with config-file keys,
// overridden by command-line flags; geometry always follows the data.
inline ModelConfig model_config_for(const io::KvMap& file_kv, const Options& opt,
                                    std::size_t n_classes, std::size_t frames,
                                    std::size_t bands) {
  ModelConfig cfg =
      model_config_from_kv(overlay(model_config_to_kv(benchmark_model_config()), file_kv));
  if (!opt.variant.empty()) cfg.variant = opt.variant;
  if (opt.window > 0) cfg.window = static_cast<std::size_t>(opt.window);
  if (opt.attention == "on") {
    cfg.use_attention = true;
  } else if (opt.attention == "off") {
    cfg.use_attention = false;
  } else if (!opt.attention.empty()) {
    throw ConfigError("--attention must be 'on' or 'off'");
  }
  cfg.n_classes = n_classes;
  cfg.frames = frames;
  cfg.bands = bands;
  return cfg;
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

// ---- subcommands ---------------------------------------------------------------

template <typename T>
int cmd_featurize(const Options& opt) {
  io::KvMap kv = load_config_file(opt.config);
  WaveClip clip = audio::read_wav(opt.input);
  Tensor<T> feats = audio::log_mel<T>(clip, feature_params_from_kv(kv));
  io::write_tensor(opt.out, feats);
  std::cout << "featurize " << opt.input << " -> " << opt.out << " shape=" << shape_str(feats.shape())
            << "\n";
  return kExitOk;
}

template <typename T>
int cmd_synth_data(const Options& opt) {
  io::KvMap kv = load_config_file(opt.config);
  SyntheticSpec spec = synth_spec_from_kv(kv);
  const std::size_t n_train = opt.train_clips > 0 ? static_cast<std::size_t>(opt.train_clips)
                                                  : kv_size(kv, "synth.train_clips", 400);
  const std::size_t n_val = opt.val_clips > 0 ? static_cast<std::size_t>(opt.val_clips)
                                              : kv_size(kv, "synth.val_clips", 100);
  write_split(opt.out + "/train", synth_dataset<T>(spec, n_train, split_seed(opt.seed, kTrainSplitTag)));
  write_split(opt.out + "/val", synth_dataset<T>(spec, n_val, split_seed(opt.seed, kValSplitTag)));
  std::cout << "synth-data seed=" << opt.seed << " train=" << n_train << " val=" << n_val
            << " dir=" << opt.out << "\n";
  return kExitOk;
}

template <typename T>
int cmd_train(const Options& opt) {
  io::KvMap kv = load_config_file(opt.config);
  SyntheticDataset<T> train_ds, val_ds;
  if (!opt.data.empty()) {
    train_ds = read_split<T>(opt.data + "/train");
    val_ds = read_split<T>(opt.data + "/val");
  } else {
    SyntheticSpec spec = synth_spec_from_kv(kv);
    const std::size_t n_train = opt.train_clips > 0 ? static_cast<std::size_t>(opt.train_clips)
                                                    : kv_size(kv, "synth.train_clips", 400);
    const std::size_t n_val = opt.val_clips > 0 ? static_cast<std::size_t>(opt.val_clips)
                                                : kv_size(kv, "synth.val_clips", 100);
    train_ds = synth_dataset<T>(spec, n_train, split_seed(opt.seed, kTrainSplitTag));
    val_ds = synth_dataset<T>(spec, n_val, split_seed(opt.seed, kValSplitTag));
  }

  TrainConfig tc = train_config_from_kv(overlay(train_config_to_kv(benchmark_train_config()), kv));
  if (opt.epochs > 0) tc.epochs = static_cast<std::size_t>(opt.epochs);
  if (opt.median_len > 0) tc.median_len = static_cast<std::size_t>(opt.median_len);
  if (opt.threshold >= 0.0) tc.threshold = opt.threshold;
  tc.seed = opt.seed;

  ModelConfig mc =
      model_config_for(kv, opt, train_ds.spec.n_classes, train_ds.spec.frames, train_ds.spec.bands);
  SedModel<T> model = make_sed_model<T>(mc, opt.seed);
  ensure_dir(opt.out);

  std::cout << "train variant=" << mc.variant << " params=" << model.store.trainable_values()
            << " train_clips=" << train_ds.clips.size() << " val_clips=" << val_ds.clips.size()
            << " epochs=" << tc.epochs << "\n";
  TrainResult res = train_loop(model, train_ds, val_ds, tc, opt.quiet ? nullptr : &std::cout,
                               opt.out + "/metrics.csv");

  io::KvMap extra = overlay(train_config_to_kv(tc), synth_spec_to_kv(train_ds.spec));
  extra["train.seed"] = std::to_string(opt.seed);
  extra["result.loss"] = io::format_double(res.final().loss);
  extra["result.eb_f1"] = io::format_double(res.final().eb_f1);
  extra["result.ib_f1"] = io::format_double(res.final().ib_f1);
  save_sed_model(opt.out + "/checkpoint.ffdc", model, extra);

  std::cout << std::fixed << std::setprecision(4) << "train done variant=" << mc.variant
            << " eb_f1=" << res.final().eb_f1 << " ib_f1=" << res.final().ib_f1
            << " checkpoint=" << opt.out << "/checkpoint.ffdc\n"
            << std::defaultfloat;
  return kExitOk;
}

template <typename T>
int cmd_evaluate(const Options& opt) {
  SedModel<T> model = load_sed_model<T>(opt.model_path);
  io::KvMap saved = io::read_checkpoint_config(opt.model_path);
  SyntheticDataset<T> ds = read_split<T>(opt.data);
  if (ds.spec.n_classes != model.cfg.n_classes || ds.spec.frames != model.cfg.frames ||
      ds.spec.bands != model.cfg.bands) {
    throw ConfigError("evaluate: dataset geometry does not match the checkpoint");
  }
  TrainConfig tc =
      train_config_from_kv(overlay(saved, load_config_file(opt.config)));
  if (opt.median_len > 0) tc.median_len = static_cast<std::size_t>(opt.median_len);
  if (opt.threshold >= 0.0) tc.threshold = opt.threshold;

  EvalResult ev = evaluate(model, ds, tc.batch_size, tc.median_len, tc.threshold);
  std::cout << std::fixed << std::setprecision(4) << "evaluate clips=" << ds.clips.size()
            << " eb_f1=" << ev.eb.f1 << " eb_precision=" << ev.eb.precision
            << " eb_recall=" << ev.eb.recall << " ib_f1=" << ev.ib.f1 << "\n"
            << std::defaultfloat;
  if (!opt.out.empty()) {
    io::KvMap kv;
    kv["eval.clips"] = std::to_string(ds.clips.size());
    kv["eval.eb_f1"] = io::format_double(ev.eb.f1);
    kv["eval.eb_precision"] = io::format_double(ev.eb.precision);
    kv["eval.eb_recall"] = io::format_double(ev.eb.recall);
    kv["eval.ib_f1"] = io::format_double(ev.ib.f1);
    kv["eval.median_len"] = std::to_string(tc.median_len);
    kv["eval.threshold"] = io::format_double(tc.threshold);
    io::write_file(opt.out, io::format_kv(kv));
  }
  return kExitOk;
}

inline int cmd_gradcheck(const Options& opt) {
  const auto entries = run_gradient_suite(static_cast<std::size_t>(opt.instances), opt.seed);
  bool all_ok = true;
  for (const GradSuiteEntry& e : entries) {
    std::cout << "gradcheck op=" << e.op << " instances=" << e.instances << " coords=" << e.coords
              << " max_rel=" << std::scientific << std::setprecision(3) << e.max_rel
              << std::defaultfloat << (e.ok ? " PASS" : " FAIL") << "\n";
    if (!e.ok) {
      all_ok = false;
      std::cout << "  worst: " << e.worst << "\n";
    }
  }
  std::cout << (all_ok ? "gradcheck PASS" : "gradcheck FAIL") << "\n";
  return all_ok ? kExitOk : kExitNumeric;
}

template <typename T>
int cmd_bench(const Options& opt) {
  DdfAxis axis = ddf_axis_from_name(opt.axis);
  DdfBenchResult r = bench_ddf<T>(axis, static_cast<std::size_t>(opt.batch),
                                  static_cast<std::size_t>(opt.channels),
                                  static_cast<std::size_t>(opt.frames),
                                  static_cast<std::size_t>(opt.bands),
                                  static_cast<std::size_t>(opt.kernel),
                                  static_cast<std::size_t>(opt.iters), opt.seed);
  std::cout << "bench axis=" << opt.axis << " dtype=" << opt.dtype << " B=" << opt.batch
            << " C=" << opt.channels << " T=" << opt.frames << " F=" << opt.bands
            << " K=" << opt.kernel << std::fixed << std::setprecision(3)
            << " fused_ms=" << r.fused_ms << " reference_ms=" << r.reference_ms
            << std::setprecision(2) << " speedup=" << r.speedup << "\n"
            << std::defaultfloat;
  if (!opt.out.empty()) {
    io::KvMap kv;
    kv["bench.axis"] = opt.axis;
    kv["bench.dtype"] = opt.dtype;
    kv["bench.fused_ms"] = io::format_double(r.fused_ms);
    kv["bench.reference_ms"] = io::format_double(r.reference_ms);
    kv["bench.speedup"] = io::format_double(r.speedup);
    io::write_file(opt.out, io::format_kv(kv));
  }
  return kExitOk;
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename T>
int cmd_dump_activations(const Options& opt) {
  io::KvMap kv = load_config_file(opt.config);
  Tensor<T> feats;
  if (ends_with(opt.input, ".wav")) {
    feats = audio::log_mel<T>(audio::read_wav(opt.input), feature_params_from_kv(kv));
  } else {
    feats = io::read_tensor<T>(opt.input);
  }
  Shape s = feats.shape();
  if (s.size() == 2) {
    feats = feats.reshaped({1, 1, s[0], s[1]});
  } else if (s.size() == 3 && s[0] == 1) {
    feats = feats.reshaped({1, 1, s[1], s[2]});
  } else if (!(s.size() == 4 && s[0] == 1 && s[1] == 1)) {
    throw ConfigError("dump-activations: input must be a single clip, got shape " + shape_str(s));
  }
  const std::size_t frames = feats.dim(2), bands = feats.dim(3);

  SedModel<T> model = opt.model_path.empty()
                          ? make_sed_model<T>(model_config_for(kv, opt,
                                                              kv_size(kv, "model.n_classes", 4),
                                                              frames, bands),
                                              opt.seed)
                          : load_sed_model<T>(opt.model_path);
  if (model.cfg.frames != frames || model.cfg.bands != bands) {
    throw ConfigError("dump-activations: input is " + std::to_string(frames) + "x" +
                      std::to_string(bands) + " but the model expects " +
                      std::to_string(model.cfg.frames) + "x" + std::to_string(model.cfg.bands));
  }

  Tape<T> tape;
  ModelOutput<T> out =
      model_forward(tape, model, tape.constant(feats), /*training=*/false, /*collect_taps=*/true);
  ensure_dir(opt.out);
  auto dump = [&](std::size_t index, const std::string& name, const Tensor<T>& t) {
    std::ostringstream file;
    file << std::setw(2) << std::setfill('0') << index << "_" << name << ".ffdt";
    io::write_tensor(opt.out + "/" + file.str(), t);
    std::cout << "wrote " << file.str() << " shape=" << shape_str(t.shape()) << "\n";
  };
  dump(0, "input", feats);
  for (std::size_t i = 0; i < out.taps.size(); ++i) {
    dump(i + 1, out.taps[i].first, tape.value(out.taps[i].second));
  }
  return kExitOk;
}

// ---- driver ---------------------------------------------------------------------

inline int run(int argc, char** argv) {
  Options opt;
  CLI::App app{"frequency-adaptive dynamic convolution toolkit"};
  app.fallthrough(true);
  app.require_subcommand(1);
  app.add_option("--threads", opt.threads, "worker threads (default: FFDCONV_THREADS or cores)");

  auto add_dtype = [&](CLI::App* sub) {
    sub->add_option("--dtype", opt.dtype, "element type")
        ->check(CLI::IsMember({"f32", "f64"}));
  };
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "key=value config file");
    sub->add_option("--seed", opt.seed, "random seed");
    add_dtype(sub);
  };

  CLI::App* feat = app.add_subcommand("featurize", "convert a wav file to log-mel features");
  feat->add_option("input", opt.input, "input .wav file")->required();
  feat->add_option("--out", opt.out, "output .ffdt path")->required();
  feat->add_option("--config", opt.config, "key=value config file");
  add_dtype(feat);

  CLI::App* synth = app.add_subcommand("synth-data", "generate a synthetic dataset on disk");
  synth->add_option("--out", opt.out, "output directory (train/ and val/ inside)")->required();
  synth->add_option("--train-clips", opt.train_clips, "training clips (default 400)");
  synth->add_option("--val-clips", opt.val_clips, "validation clips (default 100)");
  add_common(synth);

  CLI::App* train = app.add_subcommand("train", "train a sound event detection model");
  train->add_option("--out", opt.out, "output directory for checkpoint and metrics")->required();
  train->add_option("--data", opt.data, "dataset directory from synth-data (default: in-memory)");
  train->add_option("--variant", opt.variant, "conv variant: ffd, ftd, ddf, static");
  train->add_option("--window", opt.window, "filter generator window size (odd)");
  train->add_option("--attention", opt.attention, "attention constraint: on or off")
      ->check(CLI::IsMember({"on", "off"}));
  train->add_option("--epochs", opt.epochs, "training epochs");
  train->add_option("--train-clips", opt.train_clips, "training clips for in-memory data");
  train->add_option("--val-clips", opt.val_clips, "validation clips for in-memory data");
  train->add_option("--median-len", opt.median_len, "median filter length (odd)");
  train->add_option("--threshold", opt.threshold, "decision threshold");
  train->add_flag("--quiet", opt.quiet, "suppress per-epoch log lines");
  add_common(train);

  CLI::App* eval = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset split");
  eval->add_option("--model", opt.model_path, "checkpoint file")->required();
  eval->add_option("--data", opt.data, "dataset split directory")->required();
  eval->add_option("--out", opt.out, "write metrics to this key=value file");
  eval->add_option("--median-len", opt.median_len, "median filter length (odd)");
  eval->add_option("--threshold", opt.threshold, "decision threshold");
  add_common(eval);

  CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  grad->add_option("--instances", opt.instances, "random instances per op (default 20)");
  grad->add_option("--seed", opt.seed, "random seed");

  CLI::App* bench = app.add_subcommand("bench", "time the fused kernel against the reference");
  bench->add_option("--axis", opt.axis, "dynamic axis: freq, time, pixel");
  bench->add_option("--batch", opt.batch, "batch size");
  bench->add_option("--channels", opt.channels, "channels");
  bench->add_option("--frames", opt.frames, "time frames");
  bench->add_option("--bands", opt.bands, "frequency bands");
  bench->add_option("--kernel", opt.kernel, "kernel size (odd)");
  bench->add_option("--iters", opt.iters, "timing iterations (best of)");
  bench->add_option("--out", opt.out, "write results to this key=value file");
  add_common(bench);

  CLI::App* dump = app.add_subcommand("dump-activations", "run a clip and save per-stage tensors");
  dump->add_option("input", opt.input, "input .wav or .ffdt clip")->required();
  dump->add_option("--out", opt.out, "output directory")->required();
  dump->add_option("--model", opt.model_path, "checkpoint file (default: fresh seeded model)");
  dump->add_option("--variant", opt.variant, "conv variant for a fresh model");
  dump->add_option("--window", opt.window, "filter generator window for a fresh model");
  dump->add_option("--attention", opt.attention, "attention constraint: on or off")
      ->check(CLI::IsMember({"on", "off"}));
  add_common(dump);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (opt.threads > 0) parallel::set_thread_count(opt.threads);
    const bool f32 = opt.dtype == "f32";
    if (app.got_subcommand(feat)) return f32 ? cmd_featurize<float>(opt) : cmd_featurize<double>(opt);
    if (app.got_subcommand(synth)) return f32 ? cmd_synth_data<float>(opt) : cmd_synth_data<double>(opt);
    if (app.got_subcommand(train)) return f32 ? cmd_train<float>(opt) : cmd_train<double>(opt);
    if (app.got_subcommand(eval)) return f32 ? cmd_evaluate<float>(opt) : cmd_evaluate<double>(opt);
    if (app.got_subcommand(grad)) return cmd_gradcheck(opt);
    if (app.got_subcommand(bench)) return f32 ? cmd_bench<float>(opt) : cmd_bench<double>(opt);
    if (app.got_subcommand(dump)) {
      return f32 ? cmd_dump_activations<float>(opt) : cmd_dump_activations<double>(opt);
    }
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace cli
}  // namespace ffdconv
