#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sqz/audio.hpp"
#include "sqz/diffusion.hpp"
#include "sqz/nn/checkpoint.hpp"

namespace sqz {

struct ScheduleConfig {
  int steps = 50;
  double delta_max = 80.0;
  double delta_min = 0.002;

  NoiseSchedule make() const { return make_schedule(steps, delta_max, delta_min); }
  bool operator==(const ScheduleConfig&) const = default;
};

struct TrainOptions {
  int steps = 500;
  int batch = 1;
  double lr = 1e-3;
  /// Crop length in frames of the training target.
  std::size_t window = 128;
  bool deterministic = true;
};

void to_json(nlohmann::json& j, const ScheduleConfig& c);
void from_json(const nlohmann::json& j, ScheduleConfig& c);

/// Per-step loss table. The first column is the total that convergence is
/// judged on when there is more than one loss.
class TrainLog {
 public:
  TrainLog() = default;
  explicit TrainLog(std::vector<std::string> columns) : columns_(std::move(columns)) {}

  void add(std::vector<double> values);
  const std::vector<std::string>& columns() const { return columns_; }
  std::size_t size() const { return rows_.size(); }
  const std::vector<double>& row(std::size_t i) const { return rows_[i]; }
  /// Sum of all loss columns for step i.
  double total(std::size_t i) const;
  std::vector<double> column(const std::string& name) const;
  /// Mean of the last `window` totals over the mean of the first `window`.
  double tail_to_head(std::size_t window = 50) const;
  double tail_to_head(const std::string& column, std::size_t window = 50) const;
  /// CSV with a leading step column.
  void write_csv(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<double>> rows_;
};

/// Loads one track kind of every manifest entry in a split; throws
/// ConfigError when the split is empty.
enum class Track { vocal, accompaniment, mixture };
std::vector<Waveform> load_tracks(const DatasetManifest& manifest, Split split, Track track);

/// Stores and checks the mel configuration and schedule every model
/// checkpoint carries.
void write_common_header(nn::Checkpoint& ckpt, const MelConfig& mel, const ScheduleConfig& schedule,
                         const MelNorm& norm);
void read_common_header(const nn::Checkpoint& ckpt, MelConfig& mel, ScheduleConfig& schedule, MelNorm& norm);

/// Number of worker threads for parallel inference: SQZ_THREADS if set,
/// otherwise the hardware concurrency.
unsigned worker_threads();

}  // namespace sqz
