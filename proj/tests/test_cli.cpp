#include <gtest/gtest.h>

#include <algorithm>
#include <json.hpp>
#include <sstream>

#include "scratch.hpp"
#include "tiledet/cli.hpp"

using namespace tiledet;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "tiledet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

int run_quiet(std::vector<std::string> args, std::string* out = nullptr) {
  testing::internal::CaptureStdout();
  testing::internal::CaptureStderr();
  const int code = run(std::move(args));
  const std::string o = testing::internal::GetCapturedStdout();
  testing::internal::GetCapturedStderr();
  if (out) *out = o;
  return code;
}

std::vector<std::string> data_lines(const std::string& text) {
  std::vector<std::string> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') rows.push_back(line);
  return rows;
}

// Small model flags so CLI tests stay fast.
const std::vector<std::string> kTiny = {"--image-size", "16", "--patch-size", "8", "--embed-dim", "8", "--heads", "2"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST(CliTilePlan, Rows) {
  std::string out;
  ASSERT_EQ(run_quiet({"tile-plan", "--height", "500", "--width", "500", "--tile", "224"}, &out), 0);
  auto rows = data_lines(out.substr(out.find("top,left")));
  EXPECT_EQ(rows.size(), 10u);  // header + 9
  EXPECT_NE(out.find("3 x 3"), std::string::npos);

  ASSERT_EQ(run_quiet({"tile-plan", "--height", "224", "--width", "224", "--tile", "224"}, &out), 0);
  rows = data_lines(out.substr(out.find("top,left")));
  EXPECT_EQ(rows, (std::vector<std::string>{"top,left", "0,0"}));

  ASSERT_EQ(run_quiet({"tile-plan", "--height", "100", "--width", "100", "--tile", "224"}, &out), 0);
  EXPECT_NE(out.find("normalized 100x100 to 224x224"), std::string::npos);
  EXPECT_EQ(data_lines(out.substr(out.find("top,left"))).size(), 2u);
}

TEST(CliTilePlan, BadFlags) {
  EXPECT_EQ(run_quiet({"tile-plan", "--height", "abc", "--width", "5"}), 2);
  EXPECT_EQ(run_quiet({"tile-plan", "--height", "5", "--width", "5", "--bogus", "1"}), 2);
  EXPECT_EQ(run_quiet({"no-such-command"}), 2);
  EXPECT_EQ(run_quiet({}), 2);
}

TEST(CliSpectra, DeterministicAndSized) {
  const auto dir = scratch_dir("cli_spectra");
  const std::vector<std::string> base{"--seed", "7", "spectra", "--synthetic", "--count", "8", "--out-size", "16"};
  ASSERT_EQ(run_quiet(with(base, {"--out", (dir / "a").string()})), 0);
  ASSERT_EQ(run_quiet(with(base, {"--out", (dir / "b").string()})), 0);
  for (const char* f : {"ratio_crop.csv", "ratio_resize.csv", "ratio_crop.pgm", "band_energy.csv"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  const auto rows = data_lines(slurp(dir / "a" / "ratio_crop.csv"));
  EXPECT_EQ(rows.size(), 1u + 16 * 16);
  EXPECT_EQ(slurp(dir / "a" / "ratio_resize.csv").substr(0, 9), "# seed=7 ");
}

TEST(CliSpectra, MissingInput) {
  std::string err;
  testing::internal::CaptureStderr();
  testing::internal::CaptureStdout();
  const int code = run({"spectra"});
  testing::internal::GetCapturedStdout();
  err = testing::internal::GetCapturedStderr();
  EXPECT_EQ(code, 2);
  EXPECT_NE(err.find("Usage"), std::string::npos);
  EXPECT_EQ(run_quiet({"spectra", "--data", "/nonexistent_corpus"}), 3);
}

TEST(CliPipeline, TrainEvalRobustness) {
  const auto dir = scratch_dir("cli_pipe");
  const std::string data = (dir / "data").string();
  ASSERT_EQ(run_quiet({"--seed", "2", "synth-data", "--out", data, "--count", "6", "--size-min", "16", "--size-max", "24"}), 0);

  // Zero steps: the trained checkpoint is the initial one, byte for byte.
  ASSERT_EQ(run_quiet(with({"--seed", "2", "train", "--data", data, "--steps", "0", "--save-init",
                            (dir / "init.bin").string(), "--out", (dir / "t0").string()},
                           kTiny)),
            0);
  EXPECT_EQ(slurp(dir / "init.bin"), slurp(dir / "t0" / "checkpoint.bin"));

  ASSERT_EQ(run_quiet(with({"--seed", "2", "train", "--data", data, "--steps", "3", "--batch", "2", "--ablate", "both",
                            "--out", (dir / "t3").string()},
                           kTiny)),
            0);
  const auto trace = data_lines(slurp(dir / "t3" / "loss_trace.csv"));
  EXPECT_EQ(trace.size(), 4u);
  EXPECT_EQ(trace[0], "step,L_cls,L_tfl,L_qfe,L_all");

  const std::string ck = (dir / "t3" / "checkpoint.bin").string();
  for (const char* mode : {"full", "center1"})
    ASSERT_EQ(run_quiet({"eval", "--data", data, "--checkpoint", ck, "--mode", mode, "--out", (dir / "ev").string()}), 0);
  const auto a = nlohmann::json::parse(slurp(dir / "ev" / "metrics_full.json"));
  const auto b = nlohmann::json::parse(slurp(dir / "ev" / "metrics_center1.json"));
  std::vector<std::string> ka, kb;
  for (auto& [k, v] : a.items()) ka.push_back(k);
  for (auto& [k, v] : b.items()) kb.push_back(k);
  EXPECT_EQ(ka, kb);
  EXPECT_EQ(data_lines(slurp(dir / "ev" / "metrics_full.csv"))[0], data_lines(slurp(dir / "ev" / "metrics_center1.csv"))[0]);

  const std::string rcsv = (dir / "rob.csv").string();
  ASSERT_EQ(run_quiet({"robustness", "--data", data, "--checkpoint", ck, "--perturb", "jpeg", "--levels",
                       "100,90,80,70,60", "--out", rcsv}),
            0);
  EXPECT_EQ(data_lines(slurp(rcsv)).size(), 6u);
  EXPECT_EQ(run_quiet({"robustness", "--data", data, "--checkpoint", ck, "--levels", "100,x"}), 2);
  EXPECT_EQ(run_quiet({"eval", "--data", data, "--checkpoint", (dir / "missing.bin").string()}), 3);
  spit(dir / "junk.bin", "junk");
  EXPECT_EQ(run_quiet({"eval", "--data", data, "--checkpoint", (dir / "junk.bin").string()}), 3);
}

TEST(CliTrain, NonFiniteExitsFour) {
  const auto dir = scratch_dir("cli_nan");
  testing::internal::CaptureStdout();
  testing::internal::CaptureStderr();
  const int code = run(with({"train", "--synthetic", "--count", "4", "--size-min", "16", "--size-max", "16", "--steps",
                             "5", "--optimizer", "sgd", "--lr", "1e300", "--warmup", "0", "--out", dir.string()},
                            kTiny));
  testing::internal::GetCapturedStdout();
  const std::string err = testing::internal::GetCapturedStderr();
  EXPECT_EQ(code, 4);
  EXPECT_NE(err.find("at step"), std::string::npos);
}

TEST(CliConfig, FlagsWinAndUnknownKeysFail) {
  const auto dir = scratch_dir("cli_cfg");
  spit(dir / "c.json", R"({"height": 500, "width": 224, "tile": 224, "seed": 9})");
  std::string out;
  ASSERT_EQ(run_quiet({"--config", (dir / "c.json").string(), "tile-plan", "--height", "224"}, &out), 0);
  EXPECT_NE(out.find("seed=9"), std::string::npos);
  EXPECT_NE(out.find("plan 224x224"), std::string::npos);
  spit(dir / "bad.json", R"({"colour": "red"})");
  EXPECT_EQ(run_quiet({"--config", (dir / "bad.json").string(), "tile-plan", "--height", "5", "--width", "5"}), 2);
  spit(dir / "broken.json", "{");
  EXPECT_EQ(run_quiet({"--config", (dir / "broken.json").string(), "tile-plan"}), 2);
  EXPECT_EQ(run_quiet({"--config", (dir / "none.json").string(), "tile-plan"}), 3);
}

TEST(CliAugment, PreviewArtifacts) {
  const auto dir = scratch_dir("cli_aug");
  ASSERT_EQ(run_quiet({"--seed", "4", "augment-preview", "--synthetic", "--p", "1", "--out", dir.string()}), 0);
  for (const char* f : {"input.ppm", "augmented.ppm", "mask.pgm", "augment.json"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  const auto j = nlohmann::json::parse(slurp(dir / "augment.json"));
  EXPECT_EQ(j["seed"], 4);
  EXPECT_TRUE(j["label"] == 0 || j["label"] == 1);
  EXPECT_EQ(run_quiet({"augment-preview", "--input", (dir / "missing.ppm").string()}), 3);
}

TEST(CliThreads, ResultIndependentOfThreadCount) {
  const auto dir = scratch_dir("cli_threads");
  for (const char* t : {"1", "3"})
    ASSERT_EQ(run_quiet(with({"--threads", t, "--seed", "5", "train", "--synthetic", "--count", "4", "--size-min", "16",
                              "--size-max", "40", "--steps", "2", "--batch", "2", "--out", (dir / t).string()},
                             kTiny)),
              0);
  EXPECT_EQ(slurp(dir / "1" / "checkpoint.bin"), slurp(dir / "3" / "checkpoint.bin"));
}
