#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "sqz/error.hpp"
#include "sqz/metrics.hpp"
#include "sqz/rng.hpp"
#include "sqz/spectral.hpp"

using namespace sqz;

namespace {

Waveform noise_burst(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> s(n);
  for (auto& v : s) v = static_cast<float>(0.3 * rng.normal());
  return Waveform(std::move(s), 24000);
}

std::size_t argmax_bin(const MagnitudeSpec& m, std::size_t f) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < m.bins; ++k) {
    if (m.at(f, k) > m.at(f, best)) best = k;
  }
  return best;
}

}  // namespace

TEST(Stft, FrameCountLaw) {
  const SpectralConfig cfg{1024, 256};
  for (std::size_t len : {1u, 255u, 256u, 1000u, 24000u}) {
    const auto spec = stft(Waveform(std::vector<float>(len, 0.0f), 24000), cfg);
    EXPECT_EQ(spec.frames, 1 + len / 256);
    EXPECT_EQ(spec.bins, 513u);
  }
}

TEST(Stft, ZeroSignalHasZeroMagnitude) {
  const auto m = magnitude(stft(Waveform(std::vector<float>(5000, 0.0f), 24000), {2048, 512}));
  for (double v : m.data) EXPECT_EQ(v, 0.0);
}

TEST(Stft, MatchesBruteForceDftAndPeaksAtBin38) {
  const auto tone = synth_tone(440, 1.0, 24000, 0.5);
  const SpectralConfig cfg{2048, 512};
  const auto spec = stft(tone, cfg);
  const auto mag = magnitude(spec);
  for (std::size_t f : {std::size_t{0}, std::size_t{3}, std::size_t{20}, spec.frames - 1}) {
    const auto ref = oracle::dft(oracle::windowed_frame(tone.samples(), f, 2048, 512));
    for (std::size_t k = 0; k < ref.size(); ++k) ASSERT_NEAR(std::abs(spec.at(f, k) - ref[k]), 0.0, 1e-8);
  }
  // The first and last frames straddle the reflected edge of the tone.
  for (std::size_t f = 2; f + 2 < mag.frames; ++f) EXPECT_EQ(argmax_bin(mag, f), 38u) << "frame " << f;
}

TEST(Stft, Parseval) {
  const auto w = noise_burst(8192, 4);
  const SpectralConfig cfg{1024, 256};
  const auto spec = stft(w, cfg);
  for (std::size_t f = 2; f < spec.frames - 2; ++f) {
    const auto frame = oracle::windowed_frame(w.samples(), f, 1024, 256);
    double time_energy = 0.0;
    for (double v : frame) time_energy += v * v;
    // One-sided spectrum: interior bins count twice.
    double freq_energy = std::norm(spec.at(f, 0)) + std::norm(spec.at(f, 512));
    for (std::size_t k = 1; k < 512; ++k) freq_energy += 2.0 * std::norm(spec.at(f, k));
    EXPECT_NEAR(freq_energy / 1024.0, time_energy, 0.01 * time_energy);
  }
}

TEST(Istft, RoundTripInteriorError) {
  for (const SpectralConfig cfg : {SpectralConfig{1024, 256}, SpectralConfig{2048, 512}}) {
    const auto w = noise_burst(static_cast<std::size_t>(4 * cfg.fft_size + 777), 9);
    const auto back = istft(stft(w, cfg), cfg, 24000, w.size());
    ASSERT_EQ(back.size(), w.size());
    double worst = 0.0;
    for (std::size_t i = static_cast<std::size_t>(cfg.fft_size); i + cfg.fft_size < w.size(); ++i) {
      worst = std::max(worst, static_cast<double>(std::abs(back[i] - w[i])));
    }
    EXPECT_LE(worst, 1e-6);
  }
}

TEST(Istft, ZeroSpecGivesZeroWave) {
  const SpectralConfig cfg{1024, 256};
  auto spec = stft(Waveform(std::vector<float>(4096, 0.0f), 24000), cfg);
  const auto w = istft(spec, cfg, 24000);
  for (float v : w.samples()) EXPECT_EQ(v, 0.0f);
}

TEST(Istft, Linearity) {
  const SpectralConfig cfg{1024, 256};
  auto spec = stft(noise_burst(6000, 2), cfg);
  const auto a = istft(spec, cfg, 24000);
  for (auto& c : spec.data) c *= 2.0;
  const auto b = istft(spec, cfg, 24000);
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(b[i], 2.0f * a[i], 1e-6);
}

TEST(Istft, ConfigMismatchIsDomainError) {
  const auto spec = stft(noise_burst(4096, 1), {1024, 256});
  EXPECT_THROW(istft(spec, {2048, 512}, 24000), DomainError);
}

TEST(MelConfigs, ModelAndMetric) {
  const auto m = model_mel();
  EXPECT_EQ(m.spectral.fft_size, 1024);
  EXPECT_EQ(m.spectral.hop, 256);
  EXPECT_EQ(m.n_mels, 80);
  EXPECT_DOUBLE_EQ(m.fmax, 12000.0);
  const auto e = metric_mel();
  EXPECT_EQ(e.spectral.fft_size, 2048);
  EXPECT_EQ(e.spectral.hop, 512);
  EXPECT_EQ(e.n_mels, 80);
  EXPECT_NE(m.fingerprint(), e.fingerprint());
}

TEST(Filterbank, MatchesIndependentConstructionAndPartitions) {
  const auto cfg = model_mel();
  const auto& fb = mel_filterbank(cfg);
  const auto ref = oracle::htk_filterbank(24000, 1024, 80);
  for (std::size_t m = 0; m < 80; ++m) {
    double row = 0.0;
    for (std::size_t k = 0; k < fb.bins; ++k) {
      ASSERT_NEAR(fb.w(m, k), ref[m][k], 1e-12);
      row += fb.w(m, k);
    }
    EXPECT_GT(row, 0.0);
  }
  for (std::size_t k = 1; k + 1 < fb.bins; ++k) {
    double total = 0.0;
    for (std::size_t m = 0; m < 80; ++m) total += fb.w(m, k);
    EXPECT_GT(total, 0.0) << "bin " << k;
    EXPECT_LE(total, 1.0001) << "bin " << k;
  }
}

TEST(MelSpectrogram, SilenceIsFloor) {
  const auto m = mel_spectrogram(Waveform(std::vector<float>(3000, 0.0f), 24000), model_mel());
  for (float v : m.data) EXPECT_FLOAT_EQ(v, static_cast<float>(std::log(1e-5)));
}

TEST(MelSpectrogram, OneSecondHas94Frames) {
  const auto m = mel_spectrogram(synth_tone(440, 1.0, 24000, 0.5), model_mel());
  EXPECT_EQ(m.frames, 94u);
  EXPECT_EQ(m.bins, 80u);
}

TEST(MelSpectrogram, MatchesBruteForcePipeline) {
  const auto w = synth_tone(330, 0.3, 24000, 0.4);
  const auto m = mel_spectrogram(w, model_mel());
  const auto ref = oracle::log_mel(w, 1024, 256, 80);
  ASSERT_EQ(ref.size(), m.frames);
  for (std::size_t f = 0; f < m.frames; ++f) {
    for (std::size_t b = 0; b < 80; ++b) ASSERT_NEAR(m.at(f, b), ref[f][b], 1e-4);
  }
}

TEST(MelSpectrogram, DoublingAmplitudeAddsLog4) {
  const auto a = mel_spectrogram(synth_tone(440, 0.5, 24000, 0.25), model_mel());
  const auto b = mel_spectrogram(synth_tone(440, 0.5, 24000, 0.5), model_mel());
  const float floor_v = a.floor_value();
  int checked = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    if (a.data[i] > floor_v + 1e-3f) {
      ASSERT_NEAR(b.data[i] - a.data[i], std::log(4.0), 1e-4);
      ++checked;
    }
  }
  EXPECT_GT(checked, 100);
}

TEST(MelSpectrogram, RateMismatchIsDomainError) {
  EXPECT_THROW(mel_spectrogram(synth_tone(440, 0.5, 16000, 0.5), model_mel(24000)), DomainError);
}

TEST(MelToLinear, ToneArgmaxNearBin38) {
  const auto cfg = metric_mel();
  const auto m = mel_spectrogram(synth_tone(440, 1.0, 24000, 0.5), cfg);
  const auto lin = mel_to_linear(m, cfg);
  for (std::size_t f = 1; f + 1 < lin.frames; ++f) {
    const auto k = static_cast<long>(argmax_bin(lin, f));
    EXPECT_LE(std::abs(k - 38), 1) << "frame " << f;
  }
}

TEST(MelToLinear, FloorBoundFromPseudoInverse) {
  const auto cfg = model_mel();
  MelSpectrogram m(10, 80, cfg, 1.0, static_cast<float>(std::log(1e-5)));
  const auto lin = mel_to_linear(m, cfg);
  const double bound = std::sqrt(1e-5 * mel_filterbank(cfg).pinv_inf_norm());
  for (double v : lin.data) EXPECT_LE(v, bound * (1 + 1e-9));
}

TEST(MelToLinear, ScalingEnergyByFourDoublesMagnitude) {
  const auto cfg = model_mel();
  auto m = mel_spectrogram(synth_tone(523.25, 0.3, 24000, 0.3), cfg);
  const auto a = mel_to_linear(m, cfg);
  for (auto& v : m.data) v += static_cast<float>(std::log(4.0));
  const auto b = mel_to_linear(m, cfg);
  for (std::size_t i = 0; i < a.data.size(); ++i) ASSERT_NEAR(b.data[i], 2.0 * a.data[i], 1e-5 * (1 + a.data[i]));
}

TEST(GriffinLim, RecoversTonePitch) {
  const SpectralConfig cfg{1024, 256};
  const auto tone = synth_tone(440, 0.5, 24000, 0.5);
  const auto mag = magnitude(stft(tone, cfg));
  const auto x = griffin_lim(mag, cfg, 24000, {.iters = 32});
  EXPECT_NEAR(oracle::dominant_frequency(x), 440.0, 12.0);
}

TEST(GriffinLim, ZeroMagnitudeGivesZeroWave) {
  const SpectralConfig cfg{1024, 256};
  const auto mag = magnitude(stft(Waveform(std::vector<float>(4096, 0.0f), 24000), cfg));
  const auto x = griffin_lim(mag, cfg, 24000);
  for (float v : x.samples()) EXPECT_EQ(v, 0.0f);
}

TEST(GriffinLim, ConvergenceImproves) {
  const SpectralConfig cfg{1024, 256};
  const auto w = synth_tone(300, 0.5, 24000, 0.3);
  const auto mag = magnitude(stft(w, cfg));
  std::vector<double> trace;
  GriffinLimOptions opts;
  opts.iters = 64;
  opts.convergence = &trace;
  const auto x64 = griffin_lim(mag, cfg, 24000, opts);
  ASSERT_EQ(trace.size(), 64u);
  EXPECT_LE(trace.back(), trace.front());
  const auto x1 = griffin_lim(mag, cfg, 24000, {.iters = 1});
  EXPECT_LE(spectral_convergence(x64, mag), spectral_convergence(x1, mag));

  std::vector<double> fast;
  GriffinLimOptions mom;
  mom.iters = 32;
  mom.momentum = 0.99;
  mom.convergence = &fast;
  griffin_lim(mag, cfg, 24000, mom);
  EXPECT_LE(fast.back(), fast.front());
}

TEST(Vocode, ToneMelDistanceBelowThreshold) {
  const auto tone = synth_tone(440, 1.0, 24000, 0.5);
  const auto out = vocode(mel_spectrogram(tone, model_mel()));
  EXPECT_EQ(out.sample_rate(), 24000);
  EXPECT_NEAR(static_cast<double>(out.size()), 94.0 * 256, 1024.0);
  EXPECT_LT(mel_distance(tone, out.resized(tone.size())), 1.5);
}

TEST(Vocode, SilenceIsQuietAndDeterministic) {
  const MelSpectrogram m(40, 80, model_mel(), 1.0, static_cast<float>(std::log(1e-5)));
  const auto out = vocode(m);
  double acc = 0.0;
  for (float v : out.samples()) acc += static_cast<double>(v) * v;
  EXPECT_LT(std::sqrt(acc / static_cast<double>(out.size())), 1e-3);

  const auto mel = mel_spectrogram(synth_tone(250, 0.4, 24000, 0.4), model_mel());
  EXPECT_EQ(vocode(mel).samples(), vocode(mel).samples());
}

TEST(ResampleFrames, EndpointsAndLinearity) {
  MelSpectrogram m(2, 1, model_mel());
  m.at(0, 0) = 1.0f;
  m.at(1, 0) = 5.0f;
  const auto r = resample_frames(m, 5);
  const std::vector<float> want = {1.0f, 2.0f, 3.0f, 4.0f, 5.0f};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_FLOAT_EQ(r.at(i, 0), want[i]);
}

TEST(Sqzm, RoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "sqz_test.sqzm";
  auto m = mel_spectrogram(synth_tone(440, 0.2, 24000, 0.5), model_mel());
  write_sqzm(m, path);
  const auto back = read_sqzm(path, model_mel());
  EXPECT_EQ(back.frames, m.frames);
  EXPECT_EQ(back.data, m.data);
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << "JUNKJUNKJUNKJUNK";
  }
  EXPECT_THROW(read_sqzm(path, model_mel()), FormatError);
}
