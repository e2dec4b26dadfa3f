#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace sqz {

/// Mono sample sequence at a fixed rate. Samples are checked finite on
/// construction and never mutated afterwards.
class Waveform {
 public:
  Waveform() = default;
  Waveform(std::vector<float> samples, int sample_rate);

  const std::vector<float>& samples() const { return samples_; }
  int sample_rate() const { return sample_rate_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  float operator[](std::size_t i) const { return samples_[i]; }
  double duration_seconds() const {
    return sample_rate_ > 0 ? static_cast<double>(samples_.size()) / sample_rate_ : 0.0;
  }

  /// Zero-pads or truncates to exactly n samples.
  Waveform resized(std::size_t n) const;

 private:
  std::vector<float> samples_;
  int sample_rate_ = 0;
};

enum class WavEncoding { pcm16, float32 };

Waveform read_wav(const std::filesystem::path& path);
void write_wav(const Waveform& w, const std::filesystem::path& path,
               WavEncoding encoding = WavEncoding::float32);

/// amplitude * sin(2 pi f i / sr) for round(duration * sr) samples.
Waveform synth_tone(double freq_hz, double duration_s, int sample_rate, double amplitude);

struct ToySong {
  Waveform vocal;
  Waveform accompaniment;
  Waveform mixture;
  std::uint64_t seed = 0;
  double duration_s = 0.0;
};

/// Deterministic two-track song: a vibrato melody over I-IV-V-vi triads, with
/// a silent vocal intro of at least 0.75 s.
ToySong synth_toy_song(std::uint64_t seed, double duration_s, int sample_rate);

enum class Split { train, test };

struct ManifestEntry {
  std::string id;
  std::filesystem::path vocal;
  std::filesystem::path accompaniment;
  std::filesystem::path mixture;
  double duration_s = 0.0;
  Split split = Split::train;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::uint64_t seed = 0;
  /// Directory the entry paths are relative to.
  std::filesystem::path root;

  std::vector<const ManifestEntry*> split(Split s) const;
  std::filesystem::path resolve(const std::filesystem::path& p) const { return root / p; }
};

/// Writes n_songs wav triplets and manifest.json into out_dir. ceil(0.8 n)
/// songs land in the train split.
DatasetManifest make_dataset(std::uint64_t seed, int n_songs, double duration_s,
                             int sample_rate, const std::filesystem::path& out_dir);

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

}  // namespace sqz
