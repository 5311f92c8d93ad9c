// End-to-end tests that exec the command line binary and check its observable
// behaviour: output files, stdout lines, exit codes, and determinism.
#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "ffdconv/audio.hpp"
#include "ffdconv/io.hpp"
#include "ffdconv/tensor.hpp"

namespace fs = std::filesystem;
using ffdconv::Tensor;

namespace {

struct CliResult {
  int code = -1;
  std::string out;  // stdout and stderr combined
};

CliResult run_cli(const std::string& args) {
  CliResult r;
  std::string cmd = std::string(FFDCONV_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf;
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) r.out.append(buf.data(), n);
  int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path fresh_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("ffdconv_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool same_bytes(const fs::path& a, const fs::path& b) { return read_file(a) == read_file(b); }

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run_cli("").code, 1);                            // missing subcommand
  EXPECT_EQ(run_cli("no-such-command").code, 1);             // unknown subcommand
  EXPECT_EQ(run_cli("train").code, 1);                       // missing required --out
  EXPECT_EQ(run_cli("bench --axis sideways --iters 1").code, 1);  // bad axis value
  CliResult r = run_cli("train --out /tmp/x --variant nope --epochs 1");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("error"), std::string::npos);
}

TEST(Cli, MissingInputFilesExitTwo) {
  auto dir = fresh_dir("missing");
  EXPECT_EQ(run_cli("featurize " + (dir / "absent.wav").string() + " --out " +
                    (dir / "o.ffdt").string())
                .code,
            2);
  EXPECT_EQ(run_cli("evaluate --model " + (dir / "absent.ffdc").string() + " --data " +
                    dir.string())
                .code,
            2);
  EXPECT_EQ(run_cli("train --out " + (dir / "t").string() + " --data " +
                    (dir / "no_split").string())
                .code,
            2);
}

TEST(Cli, HelpListsSubcommands) {
  CliResult r = run_cli("--help");
  EXPECT_EQ(r.code, 0);
  for (const char* sub :
       {"featurize", "synth-data", "gradcheck", "train", "evaluate", "bench", "dump-activations"})
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
}

TEST(Cli, FeaturizeProducesExpectedShape) {
  auto dir = fresh_dir("feat");
  ffdconv::WaveClip clip;
  clip.sample_rate = 16000;
  clip.samples.resize(16000);  // 1 s sweep
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    double t = static_cast<double>(i) / 16000.0;
    clip.samples[i] = 0.4 * std::sin(2.0 * M_PI * (200.0 + 1800.0 * t) * t);
  }
  ffdconv::audio::write_wav((dir / "in.wav").string(), clip);

  CliResult r = run_cli("featurize " + (dir / "in.wav").string() + " --out " +
                        (dir / "feat.ffdt").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("shape=[63,128]"), std::string::npos) << r.out;
  Tensor<double> feat = ffdconv::io::read_tensor<double>((dir / "feat.ffdt").string());
  ASSERT_EQ(feat.rank(), 2u);
  EXPECT_EQ(feat.dim(0), 63u);
  EXPECT_EQ(feat.dim(1), 128u);
}

TEST(Cli, SynthDataLayoutAndDeterminism) {
  auto d1 = fresh_dir("synth1");
  auto d2 = fresh_dir("synth2");
  std::string args = " --train-clips 3 --val-clips 2 --seed 7";
  ASSERT_EQ(run_cli("synth-data --out " + d1.string() + args).code, 0);
  ASSERT_EQ(run_cli("synth-data --out " + d2.string() + args).code, 0);

  for (const char* split : {"train", "val"}) {
    ASSERT_TRUE(fs::exists(d1 / split / "meta.txt")) << split;
    ASSERT_TRUE(fs::exists(d1 / split / "labels.tsv")) << split;
  }
  EXPECT_TRUE(fs::exists(d1 / "train" / "clip_0002.ffdt"));
  EXPECT_FALSE(fs::exists(d1 / "train" / "clip_0003.ffdt"));
  EXPECT_TRUE(fs::exists(d1 / "val" / "clip_0001.ffdt"));

  // Bitwise identical across reruns with the same seed.
  for (const auto& entry : fs::recursive_directory_iterator(d1)) {
    if (!entry.is_regular_file()) continue;
    fs::path rel = fs::relative(entry.path(), d1);
    EXPECT_TRUE(same_bytes(entry.path(), d2 / rel)) << rel;
  }

  // Different seed changes the data.
  auto d3 = fresh_dir("synth3");
  ASSERT_EQ(run_cli("synth-data --out " + d3.string() + " --train-clips 3 --val-clips 2 --seed 8")
                .code,
            0);
  EXPECT_FALSE(same_bytes(d1 / "train" / "clip_0000.ffdt", d3 / "train" / "clip_0000.ffdt"));
}

TEST(Cli, TrainEvaluateRoundTrip) {
  auto data = fresh_dir("data");
  auto out = fresh_dir("trainout");
  ASSERT_EQ(run_cli("synth-data --out " + data.string() + " --train-clips 12 --val-clips 6").code,
            0);

  CliResult tr = run_cli("train --out " + out.string() + " --data " + data.string() +
                         " --variant static --epochs 2 --quiet --seed 3");
  ASSERT_EQ(tr.code, 0) << tr.out;
  EXPECT_NE(tr.out.find("train done"), std::string::npos);
  ASSERT_TRUE(fs::exists(out / "checkpoint.ffdc"));
  ASSERT_TRUE(fs::exists(out / "metrics.csv"));

  std::ifstream csv(out / "metrics.csv");
  std::string header, row;
  ASSERT_TRUE(static_cast<bool>(std::getline(csv, header)));
  EXPECT_EQ(header, "epoch,loss,eb_f1,ib_f1");
  int rows = 0;
  while (std::getline(csv, row))
    if (!row.empty()) ++rows;
  EXPECT_EQ(rows, 2);

  CliResult ev = run_cli("evaluate --model " + (out / "checkpoint.ffdc").string() + " --data " +
                         (data / "val").string() + " --out " + (out / "eval.kv").string());
  ASSERT_EQ(ev.code, 0) << ev.out;
  EXPECT_NE(ev.out.find("evaluate clips=6"), std::string::npos) << ev.out;
  EXPECT_NE(ev.out.find("eb_f1="), std::string::npos);
  std::string kv = read_file(out / "eval.kv");
  EXPECT_NE(kv.find("eval.eb_f1"), std::string::npos) << kv;
}

TEST(Cli, TrainIsBitwiseDeterministicAcrossRunsAndThreadCounts) {
  auto o1 = fresh_dir("det1");
  auto o2 = fresh_dir("det2");
  auto o3 = fresh_dir("det3");
  std::string base =
      " --variant ffd --epochs 2 --train-clips 8 --val-clips 4 --quiet --seed 11";
  ASSERT_EQ(run_cli("train --out " + o1.string() + base + " --threads 1").code, 0);
  ASSERT_EQ(run_cli("train --out " + o2.string() + base + " --threads 1").code, 0);
  ASSERT_EQ(run_cli("train --out " + o3.string() + base + " --threads 4").code, 0);
  EXPECT_TRUE(same_bytes(o1 / "checkpoint.ffdc", o2 / "checkpoint.ffdc"));
  EXPECT_TRUE(same_bytes(o1 / "metrics.csv", o2 / "metrics.csv"));
  EXPECT_TRUE(same_bytes(o1 / "checkpoint.ffdc", o3 / "checkpoint.ffdc"));
  EXPECT_TRUE(same_bytes(o1 / "metrics.csv", o3 / "metrics.csv"));
}

TEST(Cli, GradcheckPassesAndReportsPerOp) {
  CliResult r = run_cli("gradcheck --instances 2 --seed 5");
  ASSERT_EQ(r.code, 0) << r.out;
  for (const char* op : {"op=conv2d", "op=gru", "op=ddf_freq", "op=spatial_gen",
                         "op=channel_gen", "op=model"})
    EXPECT_NE(r.out.find(op), std::string::npos) << op;
  EXPECT_NE(r.out.find("gradcheck PASS"), std::string::npos);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST(Cli, BenchPrintsTimingsAndWritesKv) {
  auto dir = fresh_dir("bench");
  CliResult r = run_cli("bench --axis freq --batch 1 --channels 4 --frames 32 --bands 16 "
                        "--iters 1 --out " +
                        (dir / "bench.kv").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("bench axis=freq"), std::string::npos);
  EXPECT_NE(r.out.find("speedup="), std::string::npos);
  std::string kv = read_file(dir / "bench.kv");
  EXPECT_NE(kv.find("bench.fused_ms"), std::string::npos) << kv;
  EXPECT_NE(kv.find("bench.speedup"), std::string::npos);
}

TEST(Cli, DumpActivationsWritesStageTensors) {
  auto dir = fresh_dir("dump");
  Tensor<double> clip({1, 32, 16});
  for (std::size_t i = 0; i < clip.size(); ++i)
    clip[i] = 0.01 * static_cast<double>(i % 97) - 0.3;
  ffdconv::io::write_tensor((dir / "clip.ffdt").string(), clip);

  CliResult r = run_cli("dump-activations " + (dir / "clip.ffdt").string() + " --out " +
                        (dir / "acts").string() + " --variant ffd --seed 2");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("wrote"), std::string::npos);
  ASSERT_TRUE(fs::exists(dir / "acts" / "00_input.ffdt"));
  int stages = 0;
  bool strong = false;
  for (const auto& entry : fs::directory_iterator(dir / "acts")) {
    ++stages;
    if (entry.path().filename().string().find("strong") != std::string::npos) strong = true;
  }
  EXPECT_GE(stages, 4);
  EXPECT_TRUE(strong);

  // A loaded checkpoint pins the geometry; a mismatched clip should fail with
  // a usage/config error, not crash.
  ASSERT_EQ(run_cli("train --out " + (dir / "ckpt").string() +
                    " --epochs 1 --train-clips 4 --val-clips 2 --quiet")
                .code,
            0);
  Tensor<double> bad({1, 48, 24});
  ffdconv::io::write_tensor((dir / "bad.ffdt").string(), bad);
  EXPECT_EQ(run_cli("dump-activations " + (dir / "bad.ffdt").string() + " --model " +
                    (dir / "ckpt" / "checkpoint.ffdc").string() + " --out " +
                    (dir / "acts2").string())
                .code,
            1);
}
