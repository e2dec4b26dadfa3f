#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sqz/audio.hpp"

namespace sqz {

/// Hann-windowed, centered (reflect-padded) STFT settings. The window length
/// equals fft_size.
struct SpectralConfig {
  int fft_size = 1024;
  int hop = 256;

  void validate() const;
  int bins() const { return fft_size / 2 + 1; }
  /// Frame-count law for centered analysis: 1 + floor(len / hop).
  std::size_t frames_for(std::size_t samples) const { return 1 + samples / static_cast<std::size_t>(hop); }
  bool operator==(const SpectralConfig&) const = default;
};

struct MelConfig {
  SpectralConfig spectral;
  int sample_rate = 24000;
  int n_mels = 80;
  double fmin = 0.0;
  double fmax = 12000.0;
  double log_floor = 1e-5;

  void validate() const;
  /// Stable textual identity used for checkpoint fingerprints.
  std::string fingerprint() const;
  bool operator==(const MelConfig&) const = default;
};

/// fft 1024 / hop 256 / 80 bins, the representation every model consumes.
MelConfig model_mel(int sample_rate = 24000);
/// fft 2048 / hop 512 / 80 bins, used only by the distance metrics.
MelConfig metric_mel(int sample_rate = 24000);

struct ComplexSpec {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<std::complex<double>> data;  // frames x bins, row-major
  SpectralConfig config;

  std::complex<double>& at(std::size_t f, std::size_t k) { return data[f * bins + k]; }
  const std::complex<double>& at(std::size_t f, std::size_t k) const { return data[f * bins + k]; }
};

/// Non-negative real frames x bins matrix (linear magnitudes).
struct MagnitudeSpec {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<double> data;
  SpectralConfig config;

  double& at(std::size_t f, std::size_t k) { return data[f * bins + k]; }
  double at(std::size_t f, std::size_t k) const { return data[f * bins + k]; }
};

/// Log-mel matrix, frames x n_mels, row-major. `source_ratio` records the
/// speed-up the underlying audio was compressed by (1 for original speed).
struct MelSpectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<float> data;
  MelConfig config;
  double source_ratio = 1.0;

  MelSpectrogram() = default;
  MelSpectrogram(std::size_t frames, std::size_t bins, MelConfig cfg, double ratio = 1.0, float fill = 0.0f)
      : frames(frames), bins(bins), data(frames * bins, fill), config(std::move(cfg)), source_ratio(ratio) {}

  float& at(std::size_t f, std::size_t b) { return data[f * bins + b]; }
  float at(std::size_t f, std::size_t b) const { return data[f * bins + b]; }
  float floor_value() const { return static_cast<float>(std::log(config.log_floor)); }
};

ComplexSpec stft(const Waveform& w, const SpectralConfig& cfg);

/// Overlap-add inverse with squared-window normalization. `length` defaults to
/// (frames - 1) * hop.
Waveform istft(const ComplexSpec& spec, const SpectralConfig& cfg, int sample_rate,
               std::size_t length = static_cast<std::size_t>(-1));

MagnitudeSpec magnitude(const ComplexSpec& spec);

/// Triangular filterbank, n_mels x bins, peak-normalized (adjacent triangles
/// sum to one between the first and last centre). Cached per config.
struct MelFilterbank {
  std::size_t n_mels = 0;
  std::size_t bins = 0;
  std::vector<double> weights;  // n_mels x bins
  std::vector<double> pinv;     // bins x n_mels

  double w(std::size_t m, std::size_t k) const { return weights[m * bins + k]; }
  double p(std::size_t k, std::size_t m) const { return pinv[k * n_mels + m]; }
  /// max row-abs-sum of the pseudo-inverse.
  double pinv_inf_norm() const;
};

const MelFilterbank& mel_filterbank(const MelConfig& cfg);

MelSpectrogram mel_spectrogram(const Waveform& w, const MelConfig& cfg);
MelSpectrogram mel_from_power(const MagnitudeSpec& power, const MelConfig& cfg);

/// Non-negative least-squares inverse of the filterbank applied to exp(mel),
/// square-rooted to magnitudes.
MagnitudeSpec mel_to_linear(const MelSpectrogram& m, const MelConfig& cfg);

struct GriffinLimOptions {
  int iters = 32;
  /// Fast Griffin-Lim momentum; 0 gives the classic algorithm.
  double momentum = 0.0;
  std::size_t length = static_cast<std::size_t>(-1);
  /// Optional per-iteration spectral-convergence trace.
  std::vector<double>* convergence = nullptr;
};

Waveform griffin_lim(const MagnitudeSpec& mag, const SpectralConfig& cfg, int sample_rate,
                     const GriffinLimOptions& opts = {});

double spectral_convergence(const Waveform& x, const MagnitudeSpec& target);

/// mel_to_linear followed by Griffin-Lim from zero phase.
Waveform vocode(const MelSpectrogram& m, int iters = 32);

/// Linear interpolation of an arbitrary frame count along time; endpoints map
/// onto endpoints.
MelSpectrogram resample_frames(const MelSpectrogram& m, std::size_t out_frames);

// SQZM: "SQZM", u32 version, u32 frames, u32 bins, then float32 payload.
void write_sqzm(const MelSpectrogram& m, const std::filesystem::path& path);
MelSpectrogram read_sqzm(const std::filesystem::path& path, const MelConfig& cfg);

}  // namespace sqz
