#include "sqz/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sqz/error.hpp"
#include "sqz/spectral.hpp"

namespace sqz {

namespace {

void check_pair(const Waveform& a, const Waveform& b) {
  if (a.sample_rate() != b.sample_rate()) {
    throw DomainError("sample-rate mismatch: " + std::to_string(a.sample_rate()) + " vs " +
                      std::to_string(b.sample_rate()));
  }
}

std::pair<Waveform, Waveform> pad_pair(const Waveform& a, const Waveform& b, std::size_t max_diff) {
  const std::size_t diff = a.size() > b.size() ? a.size() - b.size() : b.size() - a.size();
  if (diff > max_diff) {
    throw DomainError("waveform lengths differ by " + std::to_string(diff) + " samples (limit " +
                      std::to_string(max_diff) + ")");
  }
  const std::size_t n = std::max(a.size(), b.size());
  return {a.resized(n), b.resized(n)};
}

}  // namespace

double mel_distance(const Waveform& a, const Waveform& b) {
  check_pair(a, b);
  const MelConfig cfg = metric_mel(a.sample_rate());
  const auto [pa, pb] = pad_pair(a, b, 2 * static_cast<std::size_t>(cfg.spectral.hop));
  const auto ma = mel_spectrogram(pa, cfg);
  const auto mb = mel_spectrogram(pb, cfg);
  double acc = 0.0;
  for (std::size_t i = 0; i < ma.data.size(); ++i) acc += std::abs(static_cast<double>(ma.data[i]) - mb.data[i]);
  return ma.data.empty() ? 0.0 : acc / static_cast<double>(ma.data.size());
}

double stft_distance(const Waveform& a, const Waveform& b) {
  check_pair(a, b);
  const SpectralConfig cfg = metric_mel(a.sample_rate()).spectral;
  const auto [pa, pb] = pad_pair(a, b, 2 * static_cast<std::size_t>(cfg.hop));
  const auto sa = magnitude(stft(pa, cfg));
  const auto sb = magnitude(stft(pb, cfg));
  double acc = 0.0;
  for (std::size_t i = 0; i < sa.data.size(); ++i) {
    acc += std::abs(std::log(sa.data[i] + 1e-5) - std::log(sb.data[i] + 1e-5));
  }
  return sa.data.empty() ? 0.0 : acc / static_cast<double>(sa.data.size());
}

double waveform_distance(const Waveform& a, const Waveform& b) {
  check_pair(a, b);
  const std::size_t n = std::max(a.size(), b.size());
  if (n == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = i < a.size() ? a[i] : 0.0;
    const double y = i < b.size() ? b[i] : 0.0;
    acc += std::abs(x - y);
  }
  return acc / static_cast<double>(n);
}

double faps(double sample_rate, double hop, double r) {
  if (!(sample_rate > 0.0) || !(hop > 0.0) || !(r > 0.0)) throw DomainError("faps arguments must be positive");
  return sample_rate / hop / r;
}

double rtf(double wall_seconds, double audio_seconds) {
  if (!(audio_seconds > 0.0)) throw DomainError("rtf needs a positive audio duration");
  return wall_seconds / audio_seconds;
}

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os << "name,mel_dis,stft_dis,wave_dis,faps,rtf\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.4f,%.6f\n", r.name.c_str(), r.mel_dis, r.stft_dis,
                  r.wave_dis, r.faps, r.rtf);
    os << buf;
  }
  return os.str();
}

std::string MetricReport::to_markdown() const {
  std::ostringstream os;
  os << "<!-- mel: " << mel_fingerprint << " | dataset: " << dataset_id << " | seed: " << seed << " -->\n";
  os << "| Model | Mel_dis (↓) | STFT_dis (↓) | Waveform_dis (↓) | FaPS (↓) | RTF (↓) |\n";
  os << "|---|---:|---:|---:|---:|---:|\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "| %s | %.4f | %.4f | %.4f | %.2f | %.4f |\n", r.name.c_str(), r.mel_dis,
                  r.stft_dis, r.wave_dis, r.faps, r.rtf);
    os << buf;
  }
  return os.str();
}

void MetricReport::write(const std::filesystem::path& path) const {
  auto csv_path = path;
  csv_path += ".csv";
  auto md_path = path;
  md_path += ".md";
  std::ofstream csv(csv_path, std::ios::trunc);
  std::ofstream md(md_path, std::ios::trunc);
  if (!csv || !md) throw IoError("cannot write report at " + path.string());
  csv << to_csv();
  md << to_markdown();
}

}  // namespace sqz
