#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "sqz/audio.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Run run_cli(const std::string& args) {
  const auto dir = fs::temp_directory_path();
  const auto out = dir / "sqz_cli_stdout.txt";
  const auto err = dir / "sqz_cli_stderr.txt";
  const std::string cmd = std::string("\"") + SQZ_CLI + "\" " + args + " >\"" + out.string() + "\" 2>\"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

fs::path scratch_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST(Cli, FapsAtRatios) {
  EXPECT_EQ(run_cli("faps --ratio 1").out, "93.75\n");
  EXPECT_EQ(run_cli("faps").out, "23.44\n");
  EXPECT_EQ(run_cli("faps --ratio 8").out, "11.72\n");
  EXPECT_EQ(run_cli("faps --ratio 4").out, "23.44\n");
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run_cli("").code, 1);
  EXPECT_EQ(run_cli("frobnicate").code, 1);
  EXPECT_EQ(run_cli("squeeze --out x.sqzm").code, 1);
  const auto bad_key = run_cli("faps --set schedule.stepz=3");
  EXPECT_EQ(bad_key.code, 1);
  EXPECT_NE(bad_key.err.find("schedule.stepz"), std::string::npos);
  EXPECT_EQ(run_cli("faps --ratio 40").code, 1);
  EXPECT_EQ(run_cli("--help").code, 0);
}

TEST(Cli, RuntimeFailureExitsTwo) {
  const auto r = run_cli("squeeze --in /nonexistent/in.wav --out /tmp/x.sqzm");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error"), std::string::npos);
}

TEST(Cli, EchoesResolvedConfigAndSeed) {
  const auto r = run_cli(std::string("--config \"") + SQZ_TINY_CONFIG + "\" --set train.lr=0.02 --seed 17 faps");
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.err.find("# resolved config (fingerprint "), std::string::npos);
  EXPECT_NE(r.err.find("train.lr = 0.02\n"), std::string::npos);
  EXPECT_NE(r.err.find("restoration.hidden = 8\n"), std::string::npos);
  EXPECT_NE(r.err.find("# seed 17\n"), std::string::npos);
}

TEST(Cli, FlagsOverrideSetAndFile) {
  const auto d = scratch_dir("sqz_cli_flags");
  const auto r = run_cli("--set sample_rate=22050 dataset synth --songs 5 --dur 2 --sr 16000 --out \"" + d.string() + "\"");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("sample_rate = 16000\n"), std::string::npos);
}

TEST(Cli, DatasetSynthSplitsEightToTwo) {
  const auto d = scratch_dir("sqz_cli_data");
  const auto r = run_cli("--seed 3 dataset synth --songs 10 --dur 2 --out \"" + d.string() + "\"");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("wrote 8 train / 2 test songs"), std::string::npos);
  EXPECT_TRUE(fs::exists(d / "manifest.json"));
}

TEST(Cli, SqueezeRestoreEndToEnd) {
  const auto d = scratch_dir("sqz_cli_e2e");
  const std::string cfg = std::string("--config \"") + SQZ_TINY_CONFIG + "\" ";
  const std::string dir = d.string();
  ASSERT_EQ(run_cli(cfg + "dataset synth --songs 5 --dur 2 --out \"" + dir + "/data\"").code, 0);
  const auto tr = run_cli(cfg + "train restoration --data \"" + dir + "/data\" --out \"" + dir + "/r.ckpt\" --log \"" + dir +
                      "/r.csv\"");
  ASSERT_EQ(tr.code, 0) << tr.err;
  EXPECT_TRUE(fs::exists(dir + "/r.csv"));

  const auto manifest = sqz::read_manifest(d / "data" / "manifest.json");
  const auto mix = d / "data" / manifest.split(sqz::Split::test).front()->mixture;
  const auto sq = run_cli(cfg + "squeeze --in \"" + mix.string() + "\" --out \"" + dir + "/c.sqzm\"");
  ASSERT_EQ(sq.code, 0) << sq.err;
  const auto rs = run_cli(cfg + "restore --in \"" + dir + "/c.sqzm\" --restoration \"" + dir + "/r.ckpt\" --out \"" + dir +
                      "/r.wav\"");
  ASSERT_EQ(rs.code, 0) << rs.err;
  const auto in = sqz::read_wav(mix);
  const auto out = sqz::read_wav(dir + "/r.wav");
  EXPECT_EQ(out.sample_rate(), in.sample_rate());
  EXPECT_NEAR(out.duration_seconds(), in.duration_seconds(), 0.05);

  const auto shapes = run_cli("restore --in \"" + dir + "/c.sqzm\" --restoration \"" + dir + "/r.ckpt\" --out \"" + dir +
                              "/x.wav\"");
  EXPECT_EQ(shapes.code, 2);
  EXPECT_NE(shapes.err.find("differs from config"), std::string::npos);
  EXPECT_EQ(run_cli(cfg + "restore --in \"" + dir + "/c.sqzm\" --restoration \"" + dir + "/missing.ckpt\" --out \"" +
                    dir + "/x.wav\"")
                .code,
            2);
}
