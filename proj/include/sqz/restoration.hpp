#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sqz/models/dit.hpp"
#include "sqz/models/prior_cnn.hpp"
#include "sqz/training.hpp"

namespace sqz {

struct RestorationConfig {
  models::PriorCnnConfig prior;
  models::DitConfig refiner{.residual_cond = true};
  ScheduleConfig schedule;
  TrainOptions train;
  std::vector<double> ratios{4.0, 8.0};
  /// Inference window of the refiner in full-resolution frames, and the
  /// overlap crossfaded between neighbours.
  std::size_t window = 128;
  std::size_t overlap = 16;
};

/// CNN prior plus DiT refiner over normalised log-mels.
struct RestorationModel {
  RestorationConfig cfg;
  MelConfig mel = model_mel();
  MelNorm norm;
  models::PriorCnn<float> prior;
  models::Dit<float> refiner;

  RestorationModel() : RestorationModel(RestorationConfig{}) {}
  explicit RestorationModel(const RestorationConfig& c, const MelConfig& m = model_mel());
  void init(std::uint64_t seed);
  nn::ParamList<float> params();

  void save(const std::filesystem::path& path) const;
  /// Throws LoadError on a corrupt file, a different module kind or a
  /// mel configuration other than `expected`.
  static RestorationModel load(const std::filesystem::path& path, const MelConfig& expected = model_mel());
};

/// mel_stretch to round(F_c r) frames followed by the CNN. m_c.source_ratio
/// must equal r.
MelSpectrogram prior_upsample(const MelSpectrogram& m_c, double r, const RestorationModel& model);

/// Compressed mel and its full-resolution target on the same frame grid.
struct RestorationPair {
  MelSpectrogram compressed;
  MelSpectrogram target;
  double ratio = 1.0;
};

/// m_c = mel(tsm_compress(w, r)); the original's mel is resampled to
/// round(F_c r) frames when the counts differ so that both ends line up.
RestorationPair make_restoration_pair(const Waveform& w, double r, const MelConfig& mel);

/// Joint training of prior and refiner on L_prior + L_refine. Losses are
/// appended to `log` (columns l_prior, l_refine).
RestorationModel train_restoration(const DatasetManifest& manifest, const RestorationConfig& cfg, std::uint64_t seed,
                                   TrainLog* log = nullptr);
RestorationModel train_restoration(const std::vector<Waveform>& songs, const RestorationConfig& cfg,
                                   std::uint64_t seed, TrainLog* log = nullptr);

/// Prior followed by windowed diffusion sampling conditioned on it. Windows
/// are sampled independently (SQZ_THREADS workers) from per-window seeds and
/// crossfaded, so the result does not depend on the thread count.
/// steps = 0 uses the checkpoint's schedule.
MelSpectrogram restore(const MelSpectrogram& m_c, double r, const RestorationModel& model, std::uint64_t seed,
                       int steps = 0, std::uint64_t* frame_tokens = nullptr);

}  // namespace sqz
