#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "sqz/error.hpp"
#include "sqz/restoration.hpp"
#include "sqz/timescale.hpp"
#include "tiny_models.hpp"

using namespace sqz;

namespace {

MelSpectrogram random_mel(std::size_t frames, double ratio, std::uint64_t seed) {
  MelSpectrogram m(frames, 80, model_mel(), ratio);
  Rng rng(seed);
  for (auto& v : m.data) v = static_cast<float>(-6.0 + 2.0 * rng.normal());
  return m;
}

RestorationModel untrained(std::uint64_t seed = 3) {
  RestorationModel model(tiny::restoration());
  model.init(seed);
  model.norm = {-6.0, 2.0};
  return model;
}

std::size_t argmax_bin(const MelSpectrogram& m, std::size_t f) {
  std::size_t best = 0;
  for (std::size_t b = 1; b < m.bins; ++b) {
    if (m.at(f, b) > m.at(f, best)) best = b;
  }
  return best;
}

}  // namespace

TEST(PriorUpsample, UntrainedEqualsMelStretch) {
  const auto model = untrained();
  const auto m_c = random_mel(24, 4.0, 1);
  const auto prior = prior_upsample(m_c, 4.0, model);
  const auto stretched = mel_stretch(m_c, 4.0);
  ASSERT_EQ(prior.frames, 96u);
  ASSERT_EQ(prior.bins, 80u);
  for (std::size_t i = 0; i < prior.data.size(); ++i) EXPECT_NEAR(prior.data[i], stretched.data[i], 1e-5);
}

TEST(PriorUpsample, FrameLawAcrossRatios) {
  const auto model = untrained();
  for (double r : {1.0, 2.5, 4.0, 8.0}) {
    const auto m_c = random_mel(37, r, 2);
    EXPECT_EQ(prior_upsample(m_c, r, model).frames, static_cast<std::size_t>(std::llround(37 * r)));
  }
}

TEST(PriorUpsample, RatioMismatchIsDomainError) {
  const auto model = untrained();
  EXPECT_THROW(prior_upsample(random_mel(10, 8.0, 3), 4.0, model), DomainError);
}

TEST(PriorUpsample, TrainedPriorTracksTonePitch) {
  const auto tone = synth_tone(440.0, 2.0, 24000, 0.5);
  auto cfg = tiny::restoration(60);
  cfg.ratios = {4.0};
  const auto model = train_restoration(std::vector<Waveform>{tone}, cfg, 11);
  const auto pair = make_restoration_pair(tone, 4.0, model.mel);
  const auto prior = prior_upsample(pair.compressed, 4.0, model);
  ASSERT_EQ(prior.frames, pair.target.frames);
  std::size_t hits = 0;
  for (std::size_t f = 0; f < prior.frames; ++f) hits += argmax_bin(prior, f) == argmax_bin(pair.target, f) ? 1 : 0;
  EXPECT_GE(static_cast<double>(hits) / static_cast<double>(prior.frames), 0.9);
}

TEST(RestorationPair, TargetAlignedToStretchedFrames) {
  const auto song = synth_toy_song(5, 4.0, 24000).mixture;
  const auto p = make_restoration_pair(song, 4.0, model_mel());
  EXPECT_EQ(p.compressed.frames, 94u);  // 1 + floor(24000 / 256)
  EXPECT_EQ(p.target.frames, 376u);
  EXPECT_EQ(p.compressed.source_ratio, 4.0);
}

TEST(Restore, ShapeContractAndDeterminism) {
  const auto model = untrained();
  const auto m_c = random_mel(94, 4.0, 4);
  const auto a = restore(m_c, 4.0, model, 7);
  const auto b = restore(m_c, 4.0, model, 7);
  EXPECT_EQ(a.frames, 376u);
  EXPECT_EQ(a.data, b.data);
  const float floor = a.floor_value();
  for (float v : a.data) EXPECT_GE(v, floor);
}

TEST(Restore, UntrainedRefinerReturnsThePrior) {
  // The last Euler step lands on the denoiser output, which for the
  // zero-initialised residual refiner is its condition in every window.
  const auto model = untrained();
  const auto m_c = random_mel(30, 4.0, 8);
  const auto out = restore(m_c, 4.0, model, 8);
  const auto prior = prior_upsample(m_c, 4.0, model);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    EXPECT_NEAR(out.data[i], std::max(prior.data[i], out.floor_value()), 1e-4);
  }
}

TEST(Restore, WindowCountDoesNotDependOnThreads) {
  const auto model = untrained();
  const auto m_c = random_mel(30, 4.0, 5);
  setenv("SQZ_THREADS", "1", 1);
  const auto one = restore(m_c, 4.0, model, 3);
  setenv("SQZ_THREADS", "3", 1);
  const auto three = restore(m_c, 4.0, model, 3);
  unsetenv("SQZ_THREADS");
  EXPECT_EQ(one.data, three.data);
}

TEST(Restore, TokenCounterCountsWindows) {
  const auto model = untrained();
  std::uint64_t tokens = 0;
  restore(random_mel(30, 4.0, 6), 4.0, model, 1, 0, &tokens);
  // 120 frames in 32-frame windows with hop 24 -> starts 0, 24, 48, 72, 88.
  EXPECT_EQ(tokens, 5u * 8u * 4u);
}

TEST(Restore, FingerprintMismatchIsLoadError) {
  const auto model = untrained();
  MelSpectrogram m(20, 80, model_mel(16000), 4.0, -5.0f);
  EXPECT_THROW(restore(m, 4.0, model, 1), LoadError);
}

TEST(RefineLoss, CopyRefinerWithOracleConditionBeatsNoiseFloor) {
  // The zero-initialised residual refiner returns its condition; with the
  // condition equal to m0 the x0 loss is zero, far below the mean noise
  // variance of the schedule.
  const auto model = untrained();
  Rng rng(9);
  Tensor<float> m0 = Tensor<float>::matrix(16, 80);
  for (auto& v : m0.values()) v = static_cast<float>(rng.normal());
  const auto schedule = model.cfg.schedule.make();
  TrainableDenoiser<float> den;
  den.forward = [&](const Tensor<float>& x, double d) { return model.refiner.forward(x, {m0}, d); };
  den.backward = [](const Tensor<float>&) {};
  double floor = 0.0;
  for (std::size_t i = 0; i < schedule.steps(); ++i) floor += schedule.levels[i] * schedule.levels[i];
  floor /= static_cast<double>(schedule.steps());
  for (int i = 0; i < 10; ++i) EXPECT_LT(refine_loss(den, m0, schedule, rng).loss, 1e-10 * floor + 1e-12);
}

TEST(TrainRestoration, DeterministicAndNonNegative) {
  const std::vector<Waveform> songs{synth_toy_song(1, 3.0, 24000).mixture};
  const auto cfg = tiny::restoration(6);
  TrainLog a, b;
  const auto ma = train_restoration(songs, cfg, 5, &a);
  train_restoration(songs, cfg, 5, &b);
  ASSERT_EQ(a.size(), 6u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.row(i), b.row(i));
    EXPECT_GE(a.row(i)[0], 0.0);
    EXPECT_GE(a.row(i)[1], 0.0);
  }
  EXPECT_EQ(a.columns(), (std::vector<std::string>{"l_prior", "l_refine"}));
}

TEST(TrainRestoration, EmptySplitIsConfigError) {
  DatasetManifest empty;
  EXPECT_THROW(train_restoration(empty, tiny::restoration(), 1), ConfigError);
}

TEST(RestorationCheckpoint, RoundTripAndKindCheck) {
  const std::vector<Waveform> songs{synth_toy_song(2, 3.0, 24000).mixture};
  const auto model = train_restoration(songs, tiny::restoration(3), 1);
  const auto path = std::filesystem::temp_directory_path() / "sqz_restoration_test.ckpt";
  model.save(path);
  const auto loaded = RestorationModel::load(path);
  const auto m_c = random_mel(12, 8.0, 7);
  EXPECT_EQ(restore(m_c, 8.0, model, 2).data, restore(m_c, 8.0, loaded, 2).data);
  EXPECT_EQ(loaded.cfg.ratios, model.cfg.ratios);
  EXPECT_THROW(RestorationModel::load(path, model_mel(16000)), LoadError);
}
