#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sqz/composer.hpp"
#include "sqz/restoration.hpp"
#include "sqz/sag.hpp"

namespace sqz {

/// Every setting of a run. Loaded from a TOML-style file of `key = value`
/// lines (optionally grouped under `[section]` headers, which prefix the
/// keys), then overridden by command-line flags.
struct RunConfig {
  int sample_rate = 24000;
  double ratio = 4.0;
  std::uint64_t seed = 0;
  ScheduleConfig schedule;
  /// steps, batch, lr and deterministic apply to every trainer; the crop
  /// window is per module.
  TrainOptions train;
  RestorationConfig restoration;
  ComposerConfig composer;
  SagConfig sag;
  std::filesystem::path data_dir = "data";
  std::filesystem::path checkpoint_dir = "checkpoints";
  std::filesystem::path output_dir = "out";

  MelConfig mel() const { return model_mel(sample_rate); }
  MelConfig metric() const { return metric_mel(sample_rate); }

  /// Throws ConfigError for unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  void load_file(const std::filesystem::path& path);
  static RunConfig from_file(const std::filesystem::path& path);
  void validate() const;

  /// Module configs with the shared schedule, training options and ratio
  /// filled in.
  RestorationConfig restoration_config() const;
  ComposerConfig composer_config() const;
  SagConfig sag_config() const;

  /// `key = value` per line in key order.
  std::string to_text() const;
  /// Stable hash of the mel configuration, schedule and model shapes.
  std::string fingerprint() const;
};

}  // namespace sqz
