#include "sqz/restoration.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "sqz/error.hpp"
#include "sqz/nn/adam.hpp"
#include "sqz/timescale.hpp"

namespace sqz {

namespace {

constexpr const char* kKind = "restoration";

Tensor<float> crop_rows(const Tensor<float>& t, std::size_t start, std::size_t count) {
  Tensor<float> out = Tensor<float>::matrix(count, t.cols());
  std::copy_n(t.values().begin() + static_cast<std::ptrdiff_t>(start * t.cols()), count * t.cols(),
              out.values().begin());
  return out;
}

void check_mel(const MelSpectrogram& m, const RestorationModel& model) {
  if (!(m.config == model.mel)) {
    throw LoadError("restoration checkpoint was trained on mel config " + model.mel.fingerprint() +
                    ", input uses " + m.config.fingerprint());
  }
}

}  // namespace

RestorationModel::RestorationModel(const RestorationConfig& c, const MelConfig& m)
    : cfg(c), mel(m), prior(c.prior), refiner(c.refiner) {
  if (!cfg.refiner.residual_cond || cfg.refiner.cond_channels != 1) {
    throw ConfigError("the restoration refiner takes exactly one residual conditioning plane");
  }
  if (cfg.prior.bins != static_cast<std::size_t>(mel.n_mels) || cfg.refiner.bins != cfg.prior.bins) {
    throw ConfigError("restoration model bins must equal the mel bin count");
  }
  if (cfg.window < 2 * cfg.overlap + 1) throw ConfigError("restoration window must exceed twice its overlap");
  if (cfg.ratios.empty()) throw ConfigError("restoration needs at least one training ratio");
}

void RestorationModel::init(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "restoration.init"));
  prior.init(rng);
  refiner.init(rng);
}

nn::ParamList<float> RestorationModel::params() {
  nn::ParamList<float> ps;
  prior.collect(ps);
  refiner.collect(ps);
  return ps;
}

void RestorationModel::save(const std::filesystem::path& path) const {
  auto& self = const_cast<RestorationModel&>(*this);  // collect hands out mutable pointers; nothing is written
  nn::ParamList<float> p, d;
  self.prior.collect(p);
  self.refiner.collect(d);
  nn::Checkpoint ck;
  ck.module_kind = kKind;
  write_common_header(ck, mel, cfg.schedule, norm);
  ck.hyperparams["prior"] = cfg.prior;
  ck.hyperparams["refiner"] = cfg.refiner;
  ck.hyperparams["ratios"] = cfg.ratios;
  ck.hyperparams["window"] = cfg.window;
  ck.hyperparams["overlap"] = cfg.overlap;
  nn::store_params(ck, p, "prior/");
  nn::store_params(ck, d, "refiner/");
  ck.save(path);
}

RestorationModel RestorationModel::load(const std::filesystem::path& path, const MelConfig& expected) {
  const auto ck = nn::Checkpoint::load(path);
  if (ck.module_kind != kKind) throw LoadError(path.string() + " holds a " + ck.module_kind + " checkpoint");
  RestorationConfig cfg;
  MelConfig mel;
  MelNorm norm;
  read_common_header(ck, mel, cfg.schedule, norm);
  if (!(mel == expected)) throw LoadError("restoration checkpoint mel fingerprint " + mel.fingerprint() +
                                          " does not match " + expected.fingerprint());
  try {
    cfg.prior = ck.hyperparams.at("prior").get<models::PriorCnnConfig>();
    cfg.refiner = ck.hyperparams.at("refiner").get<models::DitConfig>();
    cfg.ratios = ck.hyperparams.at("ratios").get<std::vector<double>>();
    cfg.window = ck.hyperparams.at("window").get<std::size_t>();
    cfg.overlap = ck.hyperparams.at("overlap").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("malformed restoration checkpoint: ") + e.what());
  }
  RestorationModel model(cfg, mel);
  model.norm = norm;
  nn::ParamList<float> p, d;
  model.prior.collect(p);
  model.refiner.collect(d);
  nn::restore_params(ck, p, "prior/");
  nn::restore_params(ck, d, "refiner/");
  return model;
}

MelSpectrogram prior_upsample(const MelSpectrogram& m_c, double r, const RestorationModel& model) {
  check_mel(m_c, model);
  if (std::abs(m_c.source_ratio - r) > 1e-9) {
    throw DomainError("prior_upsample: mel was compressed by " + std::to_string(m_c.source_ratio) + ", not " +
                      std::to_string(r));
  }
  const auto stretched = mel_stretch(m_c, r);
  const auto out = model.prior.forward(model.norm.to_tensor(stretched), r);
  return model.norm.to_mel(out, model.mel, 1.0);
}

RestorationPair make_restoration_pair(const Waveform& w, double r, const MelConfig& mel) {
  RestorationPair p;
  p.ratio = r;
  p.compressed = mel_spectrogram(tsm_compress(w, r), mel);
  p.compressed.source_ratio = r;
  p.target = mel_spectrogram(w, mel);
  const auto frames = static_cast<std::size_t>(std::llround(static_cast<double>(p.compressed.frames) * r));
  if (frames != p.target.frames) p.target = resample_frames(p.target, frames);
  return p;
}

RestorationModel train_restoration(const DatasetManifest& manifest, const RestorationConfig& cfg,
                                   std::uint64_t seed, TrainLog* log) {
  return train_restoration(load_tracks(manifest, Split::train, Track::mixture), cfg, seed, log);
}

RestorationModel train_restoration(const std::vector<Waveform>& songs, const RestorationConfig& cfg,
                                   std::uint64_t seed, TrainLog* log) {
  if (songs.empty()) throw ConfigError("train_restoration: no training songs");
  if (cfg.train.steps < 1 || cfg.train.batch < 1) throw ConfigError("training steps and batch must be positive");
  const MelConfig mel = model_mel(songs.front().sample_rate());
  RestorationModel model(cfg, mel);
  model.init(seed);

  std::vector<RestorationPair> pairs;
  std::vector<MelSpectrogram> targets;
  for (const auto& s : songs) {
    for (double r : cfg.ratios) {
      pairs.push_back(make_restoration_pair(s, r, mel));
      targets.push_back(pairs.back().target);
    }
  }
  model.norm = MelNorm::fit(targets);
  struct Prepared {
    Tensor<float> stretched, target;
    double ratio;
  };
  std::vector<Prepared> data;
  for (const auto& p : pairs) {
    data.push_back({model.norm.to_tensor(mel_stretch(p.compressed, p.ratio)), model.norm.to_tensor(p.target),
                    p.ratio});
  }

  const auto schedule = cfg.schedule.make();
  auto ps = model.params();
  nn::Adam<float> opt({.lr = cfg.train.lr});
  Rng rng(derive_seed(seed, "restoration.train"));
  if (log != nullptr) *log = TrainLog({"l_prior", "l_refine"});
  const auto inv_batch = 1.0f / static_cast<float>(cfg.train.batch);

  for (int step = 0; step < cfg.train.steps; ++step) {
    nn::zero_grads(ps);
    double l_prior = 0.0;
    double l_refine = 0.0;
    for (int b = 0; b < cfg.train.batch; ++b) {
      const auto& d = data[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1))];
      const std::size_t frames = d.target.rows();
      const std::size_t w = std::min(cfg.train.window, frames);
      const auto start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(frames - w)));
      const auto x = crop_rows(d.stretched, start, w);
      const auto m0 = crop_rows(d.target, start, w);

      models::PriorCnn<float>::Cache pc;
      const auto prior = model.prior.forward(x, d.ratio, &pc);
      Tensor<float> g_prior(prior.shape());
      double se = 0.0;
      for (std::size_t i = 0; i < prior.size(); ++i) {
        const double diff = static_cast<double>(prior[i]) - m0[i];
        se += diff * diff;
        g_prior[i] = static_cast<float>(2.0 * diff / static_cast<double>(prior.size())) * inv_batch;
      }
      l_prior += se / static_cast<double>(prior.size());

      models::Dit<float>::Cache dc;
      TrainableDenoiser<float> den;
      den.forward = [&](const Tensor<float>& noisy, double delta) {
        return model.refiner.forward(noisy, {prior}, delta, &dc);
      };
      den.backward = [&](const Tensor<float>& g) {
        Tensor<float> scaled = g;
        for (auto& v : scaled.values()) v *= inv_batch;
        auto grads = model.refiner.backward(scaled, dc);
        g_prior += grads.conds[0];
      };
      l_refine += refine_loss(den, m0, schedule, rng).loss;
      model.prior.backward(g_prior, pc);
    }
    opt.step(ps);
    if (log != nullptr) log->add({l_prior / cfg.train.batch, l_refine / cfg.train.batch});
  }
  return model;
}

MelSpectrogram restore(const MelSpectrogram& m_c, double r, const RestorationModel& model, std::uint64_t seed,
                       int steps, std::uint64_t* frame_tokens) {
  const auto prior_mel = prior_upsample(m_c, r, model);
  const auto prior = model.norm.to_tensor(prior_mel);
  ScheduleConfig sc = model.cfg.schedule;
  if (steps > 0) sc.steps = steps;
  const auto schedule = sc.make();

  const std::size_t frames = prior.rows();
  const std::size_t bins = prior.cols();
  const std::size_t w = std::min(model.cfg.window, frames);
  const std::size_t hop = model.cfg.window - model.cfg.overlap;
  std::vector<std::size_t> starts;
  for (std::size_t s = 0;; s += hop) {
    if (s + w >= frames) {
      starts.push_back(frames - w);
      break;
    }
    starts.push_back(s);
  }

  std::vector<Tensor<float>> outs(starts.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < starts.size(); j = next++) {
      const auto cond = crop_rows(prior, starts[j], w);
      Denoiser den = [&](const Tensor<float>& x, double delta) { return model.refiner.forward(x, {cond}, delta); };
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(j)));
      outs[j] = sample(den, w, bins, schedule, rng);
    }
  };
  const unsigned n_threads = std::min<unsigned>(worker_threads(), static_cast<unsigned>(starts.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  // Linear crossfade: each window's weight ramps over `overlap` frames at the
  // edges it shares with a neighbour.
  const auto ramp = static_cast<double>(std::max<std::size_t>(1, model.cfg.overlap));
  std::vector<double> acc(frames * bins, 0.0);
  std::vector<double> wsum(frames, 0.0);
  for (std::size_t j = 0; j < starts.size(); ++j) {
    for (std::size_t f = 0; f < w; ++f) {
      double weight = 1.0;
      if (j > 0) weight = std::min(weight, (static_cast<double>(f) + 0.5) / ramp);
      if (j + 1 < starts.size()) weight = std::min(weight, (static_cast<double>(w - f) - 0.5) / ramp);
      const std::size_t g = starts[j] + f;
      wsum[g] += weight;
      for (std::size_t b = 0; b < bins; ++b) acc[g * bins + b] += weight * outs[j].at(f, b);
    }
  }
  Tensor<float> merged = Tensor<float>::matrix(frames, bins);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t b = 0; b < bins; ++b) merged.at(f, b) = static_cast<float>(acc[f * bins + b] / wsum[f]);
  }
  if (frame_tokens != nullptr) {
    *frame_tokens += static_cast<std::uint64_t>(starts.size() * model.refiner.config().tokens_for(w) *
                                                schedule.steps());
  }
  auto out = model.norm.to_mel(merged, model.mel, 1.0);
  const float floor = out.floor_value();
  for (auto& v : out.data) v = std::max(v, floor);
  return out;
}

}  // namespace sqz
