#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sqz/composer.hpp"
#include "sqz/metrics.hpp"
#include "sqz/restoration.hpp"
#include "sqz/sag.hpp"

namespace sqz {

/// Compressed mel of a waveform, tagged with its ratio.
MelSpectrogram squeeze(const Waveform& w, double r, const MelConfig& mel);

/// squeeze -> restore -> vocode, trimmed or padded to the input length.
Waveform squeeze_restore(const Waveform& w, double r, const RestorationModel& model, std::uint64_t seed,
                         int steps = 0, double* seconds = nullptr);

struct BenchModels {
  const RestorationModel* restoration = nullptr;
  const ComposerModel* composer = nullptr;  // optional
  const SagModel* sag = nullptr;            // optional
};

struct BenchOptions {
  std::vector<double> ratios{1.0, 4.0, 8.0};
  std::uint64_t seed = 0;
  int restore_steps = 0;
  std::string dataset_id;
};

/// Rows over the test split: "vocoder" (mel round trip), "squeeze-<r>" per
/// ratio, and when given "compose-<r>" (continuation of the first half) and
/// "sag-<r>" (accompaniment of the vocal) at the composer's and SAG model's
/// ratios. Distance columns are means over songs; rtf is wall time over
/// audio time. Writes <out>.csv and <out>.md when `out` is non-empty.
MetricReport bench_report(const DatasetManifest& manifest, const BenchModels& models, const BenchOptions& opts,
                          const std::filesystem::path& out = {});

}  // namespace sqz
