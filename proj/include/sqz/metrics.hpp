#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sqz/audio.hpp"

namespace sqz {

/// Mean absolute difference of metric-config log-mels (fft 2048, hop 512, 80
/// bins). Lengths may differ by at most two hops; the shorter is zero-padded.
double mel_distance(const Waveform& a, const Waveform& b);

/// Mean absolute difference of log(|STFT| + 1e-5) at the metric config.
double stft_distance(const Waveform& a, const Waveform& b);

/// Mean absolute sample difference; the shorter signal is zero-padded.
double waveform_distance(const Waveform& a, const Waveform& b);

/// Audio feature frames per second of real-time music.
double faps(double sample_rate, double hop, double r);

/// Wall-clock seconds per second of generated audio.
double rtf(double wall_seconds, double audio_seconds);

struct MetricRow {
  std::string name;
  double mel_dis = 0.0;
  double stft_dis = 0.0;
  double wave_dis = 0.0;
  double faps = 0.0;
  double rtf = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  std::string mel_fingerprint;
  std::string dataset_id;
  std::uint64_t seed = 0;

  std::string to_csv() const;
  std::string to_markdown() const;
  /// Writes <path>.csv and <path>.md.
  void write(const std::filesystem::path& path) const;
};

}  // namespace sqz
