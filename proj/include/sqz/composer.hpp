#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "sqz/models/dit.hpp"
#include "sqz/restoration.hpp"
#include "sqz/training.hpp"

namespace sqz {

enum class MaskKind { scratch, continuation, completion };

const char* to_string(MaskKind k);
MaskKind parse_mask_kind(const std::string& s);

/// Frames to generate; every other frame is given.
struct MaskSpec {
  MaskKind kind = MaskKind::scratch;
  std::size_t total_frames = 0;
  std::vector<std::pair<std::size_t, std::size_t>> masked;  // [start, end)

  bool is_masked(std::size_t frame) const;
  std::size_t masked_frames() const;
};

/// Inference masks from explicit boundaries: continuation masks [begin,
/// total) and allows begin = total (nothing masked); completion masks
/// [begin, end) with 0 < begin < end < total; scratch ignores both.
MaskSpec make_mask(MaskKind kind, std::size_t total_frames, std::size_t begin = 0, std::size_t end = 0);
/// Training masks: the masked fraction is drawn uniformly from [0.25, 0.75]
/// for continuation and completion.
MaskSpec make_mask(MaskKind kind, std::size_t total_frames, Rng& rng);

struct MaskedCondition {
  MelSpectrogram mel;        // masked frames set to the log floor
  std::vector<float> plane;  // per frame, 1 on masked frames
};
MaskedCondition apply_mask(const MelSpectrogram& m, const MaskSpec& mask);

/// Per-element loss support over a [total_frames, bins] tensor: 1 on masked
/// frames.
std::vector<std::uint8_t> masked_support(const MaskSpec& mask, std::size_t bins);

struct ComposerConfig {
  models::DitConfig dit{.cond_channels = 2};
  ScheduleConfig schedule;
  TrainOptions train;
  double ratio = 4.0;
  /// Restricts the loss to masked frames.
  bool masked_only = false;
};

struct ComposerModel {
  ComposerConfig cfg;
  MelConfig mel = model_mel();
  MelNorm norm;
  models::Dit<float> dit;

  ComposerModel() : ComposerModel(ComposerConfig{}) {}
  explicit ComposerModel(const ComposerConfig& c, const MelConfig& m = model_mel());
  void init(std::uint64_t seed);

  void save(const std::filesystem::path& path) const;
  static ComposerModel load(const std::filesystem::path& path, const MelConfig& expected = model_mel());
};

/// Trains on mels of the r-compressed mixtures with masks of a uniformly
/// drawn kind. Log column: loss.
ComposerModel train_composer(const DatasetManifest& manifest, const ComposerConfig& cfg, std::uint64_t seed,
                             TrainLog* log = nullptr);
ComposerModel train_composer(const std::vector<Waveform>& songs, const ComposerConfig& cfg, std::uint64_t seed,
                             TrainLog* log = nullptr);

struct GenerationStats {
  std::uint64_t composer_tokens = 0;     // denoiser-forward frame tokens in the compressed domain
  std::uint64_t restoration_tokens = 0;  // same for the refiner
  double composer_seconds = 0.0;
  double restoration_seconds = 0.0;
  double vocoder_seconds = 0.0;
};

/// Samples the masked frames with hard consistency on the rest. Visible
/// frames of the result are the context's values; generated values are
/// clamped to the log floor. Continuation and completion need a context of
/// mask.total_frames frames.
MelSpectrogram generate(const MaskSpec& mask, const MelSpectrogram* context, const ComposerModel& model,
                        std::uint64_t seed, GenerationStats* stats = nullptr);

struct ComposeRequest {
  MaskKind task = MaskKind::scratch;
  /// Continuation: the prompt. Completion: audio of the full output length.
  std::optional<Waveform> input;
  double ratio = 4.0;
  double out_duration_s = 10.0;
  /// Completion gap in output seconds.
  double gap_begin_s = 0.0;
  double gap_end_s = 0.0;
  std::uint64_t seed = 0;
  int restore_steps = 0;
};

/// Compressed-domain generation length for an output duration.
std::size_t compressed_frames(double out_duration_s, double r, const MelConfig& mel);

/// Compress the input, take its mel, mask, generate in the compressed
/// domain, restore to full resolution and vocode.
Waveform compose_full(const ComposeRequest& req, const ComposerModel& composer, const RestorationModel& restoration,
                      GenerationStats* stats = nullptr);

}  // namespace sqz
