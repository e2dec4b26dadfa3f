#include "sqz/pipeline.hpp"

#include <chrono>

#include "sqz/error.hpp"
#include "sqz/timescale.hpp"

namespace sqz {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string ratio_name(const char* prefix, double r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%g", prefix, r);
  return buf;
}

struct Accumulator {
  MetricRow row;
  double wall = 0.0;
  double audio = 0.0;
  int n = 0;

  void add(const Waveform& truth, const Waveform& estimate, double seconds) {
    row.mel_dis += mel_distance(truth, estimate);
    row.stft_dis += stft_distance(truth, estimate);
    row.wave_dis += waveform_distance(truth, estimate);
    wall += seconds;
    audio += truth.duration_seconds();
    ++n;
  }

  MetricRow finish() {
    if (n > 0) {
      row.mel_dis /= n;
      row.stft_dis /= n;
      row.wave_dis /= n;
    }
    row.rtf = audio > 0.0 ? rtf(wall, audio) : 0.0;
    return row;
  }
};

}  // namespace

MelSpectrogram squeeze(const Waveform& w, double r, const MelConfig& mel) {
  auto m = mel_spectrogram(tsm_compress(w, r), mel);
  m.source_ratio = r;
  return m;
}

Waveform squeeze_restore(const Waveform& w, double r, const RestorationModel& model, std::uint64_t seed, int steps,
                         double* seconds) {
  const auto m_c = squeeze(w, r, model.mel);
  const auto t0 = Clock::now();
  auto out = vocode(restore(m_c, r, model, seed, steps)).resized(w.size());
  if (seconds != nullptr) *seconds = since(t0);
  return out;
}

MetricReport bench_report(const DatasetManifest& manifest, const BenchModels& models, const BenchOptions& opts,
                          const std::filesystem::path& out) {
  if (models.restoration == nullptr) throw UsageError("bench needs a restoration checkpoint");
  const auto& mel = models.restoration->mel;
  const auto entries = manifest.split(Split::test);
  if (entries.empty()) throw ConfigError("the dataset has no test split");

  MetricReport report;
  report.mel_fingerprint = mel.fingerprint();
  report.dataset_id = opts.dataset_id;
  report.seed = opts.seed;

  std::vector<Waveform> mixes;
  for (const auto* e : entries) mixes.push_back(read_wav(manifest.resolve(e->mixture)));

  Accumulator voc;
  voc.row.name = "vocoder";
  voc.row.faps = faps(mel.sample_rate, mel.spectral.hop, 1.0);
  for (const auto& x : mixes) {
    const auto t0 = Clock::now();
    const auto y = vocode(mel_spectrogram(x, mel)).resized(x.size());
    voc.add(x, y, since(t0));
  }
  report.rows.push_back(voc.finish());

  for (double r : opts.ratios) {
    Accumulator acc;
    acc.row.name = ratio_name("squeeze", r);
    acc.row.faps = faps(mel.sample_rate, mel.spectral.hop, r);
    for (std::size_t i = 0; i < mixes.size(); ++i) {
      double seconds = 0.0;
      const auto y = squeeze_restore(mixes[i], r, *models.restoration, derive_seed(opts.seed, i), opts.restore_steps,
                                     &seconds);
      acc.add(mixes[i], y, seconds);
    }
    report.rows.push_back(acc.finish());
  }

  if (models.composer != nullptr) {
    const double r = models.composer->cfg.ratio;
    Accumulator acc;
    acc.row.name = ratio_name("compose", r);
    acc.row.faps = faps(mel.sample_rate, mel.spectral.hop, r);
    for (std::size_t i = 0; i < mixes.size(); ++i) {
      ComposeRequest req;
      req.task = MaskKind::continuation;
      req.input = mixes[i].resized(mixes[i].size() / 2);
      req.ratio = r;
      req.out_duration_s = mixes[i].duration_seconds();
      req.seed = derive_seed(opts.seed, i);
      req.restore_steps = opts.restore_steps;
      const auto t0 = Clock::now();
      const auto y = compose_full(req, *models.composer, *models.restoration);
      acc.add(mixes[i], y, since(t0));
    }
    report.rows.push_back(acc.finish());
  }

  if (models.sag != nullptr) {
    const double r = models.sag->cfg.ratio;
    Accumulator acc;
    acc.row.name = ratio_name("sag", r);
    acc.row.faps = faps(mel.sample_rate, mel.spectral.hop, r);
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto vocal = read_wav(manifest.resolve(entries[i]->vocal));
      const auto truth = read_wav(manifest.resolve(models.sag->cfg.mixture_target ? entries[i]->mixture
                                                                                   : entries[i]->accompaniment));
      const auto t0 = Clock::now();
      const auto y = generate_accompaniment(vocal, r, *models.sag, *models.restoration, derive_seed(opts.seed, i),
                                            opts.restore_steps);
      acc.add(truth, y, since(t0));
    }
    report.rows.push_back(acc.finish());
  }

  if (!out.empty()) report.write(out);
  return report;
}

}  // namespace sqz
