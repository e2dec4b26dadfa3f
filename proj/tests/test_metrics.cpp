#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "oracles.hpp"
#include "sqz/error.hpp"
#include "sqz/metrics.hpp"
#include "sqz/rng.hpp"
#include "sqz/spectral.hpp"

using namespace sqz;

namespace {
Waveform silence(std::size_t n, int sr = 24000) { return Waveform(std::vector<float>(n, 0.0f), sr); }
}  // namespace

TEST(Faps, TableValues) {
  EXPECT_DOUBLE_EQ(faps(24000, 256, 1), 93.75);
  EXPECT_DOUBLE_EQ(faps(24000, 256, 4), 23.4375);
  EXPECT_DOUBLE_EQ(faps(24000, 256, 8), 11.71875);
  EXPECT_EQ(std::round(faps(24000, 256, 4) * 100) / 100, 23.44);
  EXPECT_EQ(std::round(faps(24000, 256, 8) * 100) / 100, 11.72);
  EXPECT_DOUBLE_EQ(faps(16000, 160, 3), faps(16000, 160, 1) / 3);
  EXPECT_THROW(faps(0, 256, 1), DomainError);
}

TEST(Rtf, Basics) {
  EXPECT_DOUBLE_EQ(rtf(10, 100), 0.1);
  EXPECT_DOUBLE_EQ(rtf(0, 60), 0.0);
  EXPECT_THROW(rtf(1, 0), DomainError);
}

TEST(MelDistance, IdentitySymmetryAndOracle) {
  const auto tone = synth_tone(440, 1.0, 24000, 0.5);
  const auto song = synth_toy_song(4, 2.0, 24000).mixture.resized(tone.size());
  EXPECT_EQ(mel_distance(tone, tone), 0.0);
  EXPECT_DOUBLE_EQ(mel_distance(tone, song), mel_distance(song, tone));
  EXPECT_GT(mel_distance(tone, song), 0.0);

  const auto ref = oracle::log_mel(tone, 2048, 512, 80);
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& row : ref) {
    for (double v : row) {
      acc += std::abs(v - std::log(1e-5));
      ++n;
    }
  }
  EXPECT_NEAR(mel_distance(tone, silence(tone.size())), acc / static_cast<double>(n), 1e-4);
}

TEST(MelDistance, LengthAndRateChecks) {
  const auto a = synth_tone(440, 1.0, 24000, 0.5);
  EXPECT_NO_THROW(mel_distance(a, a.resized(a.size() - 1024)));
  EXPECT_THROW(mel_distance(a, a.resized(a.size() - 1025)), DomainError);
  EXPECT_THROW(mel_distance(a, synth_tone(440, 1.0, 16000, 0.5)), DomainError);
}

TEST(StftDistance, ScalingBoundedByLog2) {
  const auto a = synth_tone(440, 1.0, 24000, 0.5);
  EXPECT_EQ(stft_distance(a, a), 0.0);
  std::vector<float> s(a.samples());
  for (auto& v : s) v *= 2.0f;
  const Waveform b(std::move(s), 24000);
  EXPECT_DOUBLE_EQ(stft_distance(a, b), stft_distance(b, a));
  EXPECT_LE(stft_distance(a, b), std::log(2.0) + 1e-9);

  Rng rng(3);
  std::vector<float> n(24000);
  for (auto& v : n) v = static_cast<float>(0.5 * rng.normal());
  std::vector<float> n2(n);
  for (auto& v : n2) v *= 2.0f;
  EXPECT_NEAR(stft_distance(Waveform(n, 24000), Waveform(n2, 24000)), std::log(2.0), 1e-3);
}

TEST(WaveformDistance, ClosedForms) {
  const auto a = synth_tone(440, 1.0, 24000, 0.5);
  EXPECT_EQ(waveform_distance(a, a), 0.0);
  std::vector<float> neg(a.samples());
  double mean2 = 0.0;
  for (auto& v : neg) {
    mean2 += std::abs(2.0 * v);
    v = -v;
  }
  EXPECT_NEAR(waveform_distance(a, Waveform(neg, 24000)), mean2 / static_cast<double>(a.size()), 1e-12);
  EXPECT_NEAR(waveform_distance(a, silence(a.size())), 0.5 * 2.0 / std::numbers::pi, 1e-3);
  EXPECT_THROW(waveform_distance(a, silence(10, 16000)), DomainError);
}

TEST(Report, CsvAndMarkdown) {
  MetricReport r;
  r.mel_fingerprint = model_mel().fingerprint();
  r.dataset_id = "toy";
  r.seed = 5;
  r.rows.push_back({"Squeeze-4", 1.0, 2.0, 0.1, faps(24000, 256, 4), 0.05});
  const auto csv = r.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "name,mel_dis,stft_dis,wave_dis,faps,rtf");
  EXPECT_NE(csv.find("Squeeze-4,1.000000,2.000000,0.100000,23.4375"), std::string::npos);
  const auto md = r.to_markdown();
  EXPECT_NE(md.find("| Model | Mel_dis"), std::string::npos);
  EXPECT_NE(md.find("| 23.44 |"), std::string::npos);
  const auto base = std::filesystem::temp_directory_path() / "sqz_report";
  r.write(base);
  EXPECT_TRUE(std::filesystem::exists(base.string() + ".csv"));
  EXPECT_TRUE(std::filesystem::exists(base.string() + ".md"));
}
