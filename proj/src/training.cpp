#include "sqz/training.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <thread>

#include "sqz/error.hpp"

namespace sqz {

void to_json(nlohmann::json& j, const ScheduleConfig& c) {
  j = {{"steps", c.steps}, {"delta_max", c.delta_max}, {"delta_min", c.delta_min}};
}

void from_json(const nlohmann::json& j, ScheduleConfig& c) {
  j.at("steps").get_to(c.steps);
  j.at("delta_max").get_to(c.delta_max);
  j.at("delta_min").get_to(c.delta_min);
}

void TrainLog::add(std::vector<double> values) {
  if (values.size() != columns_.size()) throw ShapeError("TrainLog: row width differs from the column count");
  rows_.push_back(std::move(values));
}

double TrainLog::total(std::size_t i) const {
  double s = 0.0;
  for (double v : rows_.at(i)) s += v;
  return s;
}

std::vector<double> TrainLog::column(const std::string& name) const {
  std::size_t c = 0;
  while (c < columns_.size() && columns_[c] != name) ++c;
  if (c == columns_.size()) throw DomainError("TrainLog has no column " + name);
  std::vector<double> out;
  out.reserve(rows_.size());
  for (const auto& r : rows_) out.push_back(r[c]);
  return out;
}

namespace {

double tail_ratio(const std::vector<double>& v, std::size_t window) {
  if (window == 0 || v.size() < window) throw DomainError("TrainLog: fewer steps than the averaging window");
  double head = 0.0;
  double tail = 0.0;
  for (std::size_t i = 0; i < window; ++i) {
    head += v[i];
    tail += v[v.size() - window + i];
  }
  return head > 0.0 ? tail / head : 0.0;
}

}  // namespace

double TrainLog::tail_to_head(std::size_t window) const {
  std::vector<double> t(rows_.size());
  for (std::size_t i = 0; i < rows_.size(); ++i) t[i] = total(i);
  return tail_ratio(t, window);
}

double TrainLog::tail_to_head(const std::string& column_name, std::size_t window) const {
  return tail_ratio(column(column_name), window);
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "step";
  for (const auto& c : columns_) f << ',' << c;
  f << '\n' << std::setprecision(9);
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    f << i;
    for (double v : rows_[i]) f << ',' << v;
    f << '\n';
  }
  if (!f) throw IoError("failed writing " + path.string());
}

std::vector<Waveform> load_tracks(const DatasetManifest& manifest, Split split, Track track) {
  const auto entries = manifest.split(split);
  if (entries.empty()) throw ConfigError("the dataset split used for training is empty");
  std::vector<Waveform> out;
  for (const auto* e : entries) {
    const auto& p = track == Track::vocal ? e->vocal : track == Track::accompaniment ? e->accompaniment : e->mixture;
    if (p.empty()) throw ConfigError("manifest entry " + e->id + " lacks a required track");
    out.push_back(read_wav(manifest.resolve(p)));
  }
  return out;
}

void write_common_header(nn::Checkpoint& ckpt, const MelConfig& mel, const ScheduleConfig& schedule,
                         const MelNorm& norm) {
  auto& h = ckpt.hyperparams;
  h["mel_fingerprint"] = mel.fingerprint();
  h["sample_rate"] = mel.sample_rate;
  h["schedule"] = schedule;
  h["norm"] = {{"mean", norm.mean}, {"std", norm.std}};
}

void read_common_header(const nn::Checkpoint& ckpt, MelConfig& mel, ScheduleConfig& schedule, MelNorm& norm) {
  try {
    const auto& h = ckpt.hyperparams;
    mel = model_mel(h.at("sample_rate").get<int>());
    if (mel.fingerprint() != h.at("mel_fingerprint").get<std::string>()) {
      throw LoadError("checkpoint mel configuration is not the model mel configuration");
    }
    schedule = h.at("schedule").get<ScheduleConfig>();
    norm.mean = h.at("norm").at("mean").get<double>();
    norm.std = h.at("norm").at("std").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("malformed checkpoint header: ") + e.what());
  }
}

unsigned worker_threads() {
  if (const char* env = std::getenv("SQZ_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return static_cast<unsigned>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace sqz
