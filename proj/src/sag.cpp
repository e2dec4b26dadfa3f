#include "sqz/sag.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>

#include "sqz/error.hpp"
#include "sqz/nn/adam.hpp"
#include "sqz/timescale.hpp"

namespace sqz {

namespace {

constexpr const char* kKind = "sag";
constexpr double kChromaLow = 27.5;
constexpr double kChromaHigh = 5000.0;

using Clock = std::chrono::steady_clock;

Tensor<float> crop_rows(const Tensor<float>& t, std::size_t start, std::size_t count) {
  Tensor<float> out = Tensor<float>::matrix(count, t.cols());
  std::copy_n(t.values().begin() + static_cast<std::ptrdiff_t>(start * t.cols()), count * t.cols(),
              out.values().begin());
  return out;
}

}  // namespace

SemanticSequence semantic_features(const Waveform& w, const MelConfig& mel) {
  auto power = magnitude(stft(w, mel.spectral));
  for (double& v : power.data) v *= v;
  const auto logmel = mel_from_power(power, mel);
  if (logmel.bins != kBandDims * 10) throw ConfigError("semantic features expect 80 mel bands");

  // Pitch class of every STFT bin in range, with C = 0.
  std::vector<int> pitch_class(power.bins, -1);
  for (std::size_t k = 1; k < power.bins; ++k) {
    const double f = static_cast<double>(k) * mel.sample_rate / mel.spectral.fft_size;
    if (f < kChromaLow || f > kChromaHigh) continue;
    const auto semis = static_cast<long>(std::lround(12.0 * std::log2(f / 440.0))) + 9;
    pitch_class[k] = static_cast<int>(((semis % 12) + 12) % 12);
  }

  SemanticSequence s;
  s.frames = logmel.frames;
  s.data.assign(s.frames * s.dims, 0.0f);
  const double floor = std::log(mel.log_floor);
  const double n = static_cast<double>(logmel.bins);
  for (std::size_t f = 0; f < s.frames; ++f) {
    double chroma[kChromaDims] = {};
    double total = 0.0;
    for (std::size_t k = 0; k < power.bins; ++k) {
      if (pitch_class[k] < 0) continue;
      chroma[pitch_class[k]] += power.at(f, k);
      total += power.at(f, k);
    }
    if (total > 0.0) {
      for (std::size_t c = 0; c < kChromaDims; ++c) s.at(f, c) = static_cast<float>(chroma[c] / total);
    }
    for (std::size_t band = 0; band < kBandDims; ++band) {
      double e = 0.0;
      for (std::size_t b = band * 10; b < band * 10 + 10; ++b) e += std::exp(static_cast<double>(logmel.at(f, b)));
      s.at(f, kChromaDims + band) = static_cast<float>(std::max(std::log(e / 10.0), floor));
    }
    for (std::size_t q = 1; q <= kCepstralDims; ++q) {
      double c = 0.0;
      for (std::size_t b = 0; b < logmel.bins; ++b) {
        c += logmel.at(f, b) * std::cos(std::numbers::pi * static_cast<double>(q) * (static_cast<double>(b) + 0.5) / n);
      }
      s.at(f, kChromaDims + kBandDims + q - 1) = static_cast<float>(c * std::sqrt(2.0 / n));
    }
  }
  return s;
}

Tensor<float> SemanticNorm::to_tensor(const SemanticSequence& s) const {
  Tensor<float> t = Tensor<float>::matrix(s.frames, s.dims);
  for (std::size_t f = 0; f < s.frames; ++f) {
    for (std::size_t d = 0; d < s.dims; ++d) t.at(f, d) = static_cast<float>((s.at(f, d) - mean[d]) / std[d]);
  }
  return t;
}

SemanticNorm SemanticNorm::fit(const std::vector<SemanticSequence>& seqs) {
  SemanticNorm n;
  std::vector<double> sum(kSemanticDims, 0.0), sq(kSemanticDims, 0.0);
  double count = 0.0;
  for (const auto& s : seqs) {
    for (std::size_t f = 0; f < s.frames; ++f) {
      for (std::size_t d = 0; d < kSemanticDims; ++d) {
        sum[d] += s.at(f, d);
        sq[d] += static_cast<double>(s.at(f, d)) * s.at(f, d);
      }
    }
    count += static_cast<double>(s.frames);
  }
  if (count == 0.0) throw DomainError("SemanticNorm::fit needs at least one frame");
  for (std::size_t d = 0; d < kSemanticDims; ++d) {
    n.mean[d] = sum[d] / count;
    const double var = std::max(0.0, sq[d] / count - n.mean[d] * n.mean[d]);
    n.std[d] = std::max(std::sqrt(var), 1e-3);
  }
  return n;
}

SagModel::SagModel(const SagConfig& c, const MelConfig& m) : cfg(c), mel(m), prior(c.prior), dit(c.dit) {
  if (cfg.prior.sem_dim != kSemanticDims) throw ConfigError("SAG prior sem_dim must be 32");
  if (cfg.prior.bins != static_cast<std::size_t>(mel.n_mels) || cfg.dit.bins != cfg.prior.bins) {
    throw ConfigError("SAG model bins must equal the mel bins");
  }
  if (cfg.dit.cond_channels != 1 || !cfg.dit.residual_cond) {
    throw ConfigError("the SAG DiT takes exactly one residual conditioning plane");
  }
  SpeedRatio check(cfg.ratio);
  (void)check;
}

void SagModel::init(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "sag.init"));
  prior.init(rng);
  dit.init(rng);
}

nn::ParamList<float> SagModel::params() {
  nn::ParamList<float> ps;
  prior.collect(ps);
  dit.collect(ps);
  return ps;
}

void SagModel::save(const std::filesystem::path& path) const {
  auto& self = const_cast<SagModel&>(*this);  // collect hands out mutable pointers; nothing is written
  nn::ParamList<float> p, d;
  self.prior.collect(p);
  self.dit.collect(d);
  nn::Checkpoint ck;
  ck.module_kind = kKind;
  write_common_header(ck, mel, cfg.schedule, norm);
  ck.hyperparams["prior"] = cfg.prior;
  ck.hyperparams["dit"] = cfg.dit;
  ck.hyperparams["ratio"] = cfg.ratio;
  ck.hyperparams["mixture_target"] = cfg.mixture_target;
  ck.hyperparams["sem_norm"] = {{"mean", sem_norm.mean}, {"std", sem_norm.std}};
  nn::store_params(ck, p, "prior/");
  nn::store_params(ck, d, "dit/");
  ck.save(path);
}

SagModel SagModel::load(const std::filesystem::path& path, const MelConfig& expected) {
  const auto ck = nn::Checkpoint::load(path);
  if (ck.module_kind != kKind) throw LoadError(path.string() + " holds a " + ck.module_kind + " checkpoint");
  SagConfig cfg;
  MelConfig mel;
  MelNorm norm;
  SemanticNorm sem;
  read_common_header(ck, mel, cfg.schedule, norm);
  if (!(mel == expected)) throw LoadError("SAG checkpoint mel fingerprint " + mel.fingerprint() +
                                          " does not match " + expected.fingerprint());
  try {
    cfg.prior = ck.hyperparams.at("prior").get<models::SagPriorConfig>();
    cfg.dit = ck.hyperparams.at("dit").get<models::DitConfig>();
    cfg.ratio = ck.hyperparams.at("ratio").get<double>();
    cfg.mixture_target = ck.hyperparams.at("mixture_target").get<bool>();
    sem.mean = ck.hyperparams.at("sem_norm").at("mean").get<std::vector<double>>();
    sem.std = ck.hyperparams.at("sem_norm").at("std").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("malformed SAG checkpoint: ") + e.what());
  }
  if (sem.mean.size() != kSemanticDims || sem.std.size() != kSemanticDims) {
    throw LoadError("SAG checkpoint semantic statistics have the wrong width");
  }
  SagModel model(cfg, mel);
  model.norm = norm;
  model.sem_norm = sem;
  nn::ParamList<float> p, d;
  model.prior.collect(p);
  model.dit.collect(d);
  nn::restore_params(ck, p, "prior/");
  nn::restore_params(ck, d, "dit/");
  return model;
}

Tensor<float> prior_encode(const SemanticSequence& sem, const MelSpectrogram& vocal_mel, const SagModel& model) {
  if (sem.frames != vocal_mel.frames) {
    throw DomainError("semantic features have " + std::to_string(sem.frames) + " frames, the vocal mel " +
                      std::to_string(vocal_mel.frames));
  }
  if (!(vocal_mel.config == model.mel)) throw LoadError("vocal mel config does not match the SAG checkpoint");
  return model.prior.forward(model.sem_norm.to_tensor(sem), model.norm.to_tensor(vocal_mel)).prior;
}

SagExample make_sag_example(const Waveform& vocal, const Waveform& target, double r, const MelConfig& mel) {
  if (vocal.size() != target.size()) throw ConfigError("vocal and target tracks differ in length");
  const auto v = tsm_compress(vocal, r);
  const auto t = tsm_compress(target, r);
  SagExample e{semantic_features(v, mel), semantic_features(t, mel), mel_spectrogram(v, mel),
               mel_spectrogram(t, mel)};
  e.vocal_mel.source_ratio = r;
  e.target_mel.source_ratio = r;
  return e;
}

SagModel train_sag(const DatasetManifest& manifest, const SagConfig& cfg, std::uint64_t seed, TrainLog* log) {
  return train_sag(load_tracks(manifest, Split::train, Track::vocal),
                   load_tracks(manifest, Split::train, cfg.mixture_target ? Track::mixture : Track::accompaniment),
                   cfg, seed, log);
}

SagModel train_sag(const std::vector<Waveform>& vocals, const std::vector<Waveform>& targets, const SagConfig& cfg,
                   std::uint64_t seed, TrainLog* log) {
  if (vocals.empty()) throw ConfigError("train_sag: no training songs");
  if (vocals.size() != targets.size()) throw ConfigError("train_sag: every vocal needs a target track");
  if (cfg.train.steps < 1 || cfg.train.batch < 1) throw ConfigError("training steps and batch must be positive");
  const MelConfig mel = model_mel(vocals.front().sample_rate());
  SagModel model(cfg, mel);
  model.init(seed);

  std::vector<SagExample> examples;
  std::vector<MelSpectrogram> mels;
  std::vector<SemanticSequence> sems;
  for (std::size_t i = 0; i < vocals.size(); ++i) {
    examples.push_back(make_sag_example(vocals[i], targets[i], cfg.ratio, mel));
    mels.push_back(examples.back().vocal_mel);
    mels.push_back(examples.back().target_mel);
    sems.push_back(examples.back().vocal_sem);
    sems.push_back(examples.back().target_sem);
  }
  model.norm = MelNorm::fit(mels);
  model.sem_norm = SemanticNorm::fit(sems);
  struct Prepared {
    Tensor<float> vsem, tsem, vmel, tmel;
  };
  std::vector<Prepared> data;
  for (const auto& e : examples) {
    data.push_back({model.sem_norm.to_tensor(e.vocal_sem), model.sem_norm.to_tensor(e.target_sem),
                    model.norm.to_tensor(e.vocal_mel), model.norm.to_tensor(e.target_mel)});
  }

  const auto schedule = cfg.schedule.make();
  auto ps = model.params();
  nn::Adam<float> opt({.lr = cfg.train.lr});
  Rng rng(derive_seed(seed, "sag.train"));
  if (log != nullptr) *log = TrainLog({"l_sem", "l_prior", "l_diff"});
  const auto inv_batch = 1.0f / static_cast<float>(cfg.train.batch);

  auto mse = [&](const Tensor<float>& y, const Tensor<float>& target, Tensor<float>& grad) {
    double se = 0.0;
    grad = Tensor<float>(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double diff = static_cast<double>(y[i]) - target[i];
      se += diff * diff;
      grad[i] = static_cast<float>(2.0 * diff / static_cast<double>(y.size())) * inv_batch;
    }
    return se / static_cast<double>(y.size());
  };

  for (int step = 0; step < cfg.train.steps; ++step) {
    nn::zero_grads(ps);
    double l_sem = 0.0, l_prior = 0.0, l_diff = 0.0;
    for (int b = 0; b < cfg.train.batch; ++b) {
      const auto& d = data[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1))];
      const std::size_t frames = d.vmel.rows();
      const std::size_t w = std::min(cfg.train.window, frames);
      const auto start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(frames - w)));
      const auto tmel = crop_rows(d.tmel, start, w);

      models::SagPrior<float>::Cache pc;
      const auto out = model.prior.forward(crop_rows(d.vsem, start, w), crop_rows(d.vmel, start, w), &pc);
      Tensor<float> g_sem, g_prior;
      l_sem += mse(out.semantic, crop_rows(d.tsem, start, w), g_sem);
      l_prior += mse(out.prior, tmel, g_prior);

      models::Dit<float>::Cache dc;
      TrainableDenoiser<float> den;
      den.forward = [&](const Tensor<float>& x, double delta) {
        return model.dit.forward(x, {out.prior}, delta, &dc);
      };
      den.backward = [&](const Tensor<float>& g) {
        Tensor<float> scaled = g;
        for (auto& v : scaled.values()) v *= inv_batch;
        g_prior += model.dit.backward(scaled, dc).conds[0];
      };
      l_diff += refine_loss(den, tmel, schedule, rng).loss;
      model.prior.backward(g_prior, g_sem, pc);
    }
    opt.step(ps);
    const double nb = cfg.train.batch;
    if (log != nullptr) log->add({l_sem / nb, l_prior / nb, l_diff / nb});
  }
  return model;
}

Waveform generate_accompaniment(const Waveform& vocal, double r, const SagModel& sag,
                                const RestorationModel& restoration, std::uint64_t seed, int restore_steps,
                                GenerationStats* stats) {
  if (!(restoration.mel == sag.mel)) throw LoadError("SAG and restoration checkpoints use different mel configs");
  if (vocal.sample_rate() != sag.mel.sample_rate) throw DomainError("vocal sample rate differs from the model's");
  auto t0 = Clock::now();
  const SpeedRatio ratio(r);
  const auto v = tsm_compress(vocal, ratio);
  const auto sem = semantic_features(v, sag.mel);
  auto vmel = mel_spectrogram(v, sag.mel);
  vmel.source_ratio = r;
  const auto prior = prior_encode(sem, vmel, sag);

  Denoiser den = [&](const Tensor<float>& x, double delta) { return sag.dit.forward(x, {prior}, delta); };
  Rng rng(derive_seed(seed, "sag.generate"));
  const auto schedule = sag.cfg.schedule.make();
  auto z_c = sag.norm.to_mel(sample(den, prior.rows(), prior.cols(), schedule, rng), sag.mel, r);
  const float floor = z_c.floor_value();
  for (auto& x : z_c.data) x = std::max(x, floor);
  if (stats != nullptr) {
    stats->composer_tokens += static_cast<std::uint64_t>(sag.dit.config().tokens_for(prior.rows()) * schedule.steps());
    stats->composer_seconds += std::chrono::duration<double>(Clock::now() - t0).count();
  }

  t0 = Clock::now();
  std::uint64_t tokens = 0;
  const auto z = restore(z_c, r, restoration, derive_seed(seed, "sag.restore"), restore_steps, &tokens);
  if (stats != nullptr) {
    stats->restoration_tokens += tokens;
    stats->restoration_seconds += std::chrono::duration<double>(Clock::now() - t0).count();
  }
  t0 = Clock::now();
  auto audio = vocode(z).resized(vocal.size());
  if (stats != nullptr) stats->vocoder_seconds += std::chrono::duration<double>(Clock::now() - t0).count();
  return audio;
}

}  // namespace sqz
