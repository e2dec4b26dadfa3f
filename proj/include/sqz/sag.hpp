#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sqz/composer.hpp"
#include "sqz/models/dit.hpp"
#include "sqz/models/sag_prior.hpp"
#include "sqz/restoration.hpp"
#include "sqz/training.hpp"

namespace sqz {

constexpr std::size_t kChromaDims = 12;
constexpr std::size_t kBandDims = 8;
constexpr std::size_t kCepstralDims = 12;
constexpr std::size_t kSemanticDims = kChromaDims + kBandDims + kCepstralDims;

/// Frame-aligned vocal descriptors on the model mel grid:
/// [chroma(12) | band log-energy(8) | mel cepstra c1..c12].
struct SemanticSequence {
  std::size_t frames = 0;
  std::size_t dims = kSemanticDims;
  std::vector<float> data;  // frames x dims

  float& at(std::size_t f, std::size_t d) { return data[f * dims + d]; }
  float at(std::size_t f, std::size_t d) const { return data[f * dims + d]; }
};

/// Chroma is the power share of each pitch class among STFT bins between
/// 27.5 Hz and 5 kHz (all zero for silent frames). Band energies are
/// log(mean exp(mel)) over ten consecutive mel bands. Cepstra are the
/// orthonormal DCT-II of the log-mel frame.
SemanticSequence semantic_features(const Waveform& w, const MelConfig& mel);

/// Per-dimension standardisation of semantic features.
struct SemanticNorm {
  std::vector<double> mean = std::vector<double>(kSemanticDims, 0.0);
  std::vector<double> std = std::vector<double>(kSemanticDims, 1.0);

  Tensor<float> to_tensor(const SemanticSequence& s) const;
  static SemanticNorm fit(const std::vector<SemanticSequence>& seqs);
};

struct SagConfig {
  models::SagPriorConfig prior;
  models::DitConfig dit{.residual_cond = true};
  ScheduleConfig schedule;
  TrainOptions train{.window = 64};
  double ratio = 4.0;
  /// Train towards the mixture instead of the accompaniment alone.
  bool mixture_target = false;
};

struct SagModel {
  SagConfig cfg;
  MelConfig mel = model_mel();
  MelNorm norm;
  SemanticNorm sem_norm;
  models::SagPrior<float> prior;
  models::Dit<float> dit;

  SagModel() : SagModel(SagConfig{}) {}
  explicit SagModel(const SagConfig& c, const MelConfig& m = model_mel());
  void init(std::uint64_t seed);
  nn::ParamList<float> params();

  void save(const std::filesystem::path& path) const;
  static SagModel load(const std::filesystem::path& path, const MelConfig& expected = model_mel());
};

/// Prior accompaniment in the model's normalised mel units ([F, bins]); an
/// untrained model returns zeros.
Tensor<float> prior_encode(const SemanticSequence& sem, const MelSpectrogram& vocal_mel, const SagModel& model);

/// Compressed-domain training pair of one song.
struct SagExample {
  SemanticSequence vocal_sem, target_sem;
  MelSpectrogram vocal_mel, target_mel;
};
SagExample make_sag_example(const Waveform& vocal, const Waveform& target, double r, const MelConfig& mel);

/// Log columns: l_sem, l_prior, l_diff.
SagModel train_sag(const DatasetManifest& manifest, const SagConfig& cfg, std::uint64_t seed,
                   TrainLog* log = nullptr);
SagModel train_sag(const std::vector<Waveform>& vocals, const std::vector<Waveform>& targets, const SagConfig& cfg,
                   std::uint64_t seed, TrainLog* log = nullptr);

/// Compress the vocal, encode a prior, sample the accompaniment mel with the
/// DiT, restore to full resolution and vocode; the result has the vocal's
/// length and sample rate.
Waveform generate_accompaniment(const Waveform& vocal, double r, const SagModel& sag,
                                const RestorationModel& restoration, std::uint64_t seed, int restore_steps = 0,
                                GenerationStats* stats = nullptr);

}  // namespace sqz
