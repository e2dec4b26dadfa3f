#include "sqz/composer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "sqz/error.hpp"
#include "sqz/nn/adam.hpp"
#include "sqz/timescale.hpp"

namespace sqz {

namespace {

constexpr const char* kKind = "composer";
constexpr std::size_t kMinFrames = 8;

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

Tensor<float> plane_tensor(const std::vector<float>& plane, std::size_t bins) {
  Tensor<float> t = Tensor<float>::matrix(plane.size(), bins);
  for (std::size_t f = 0; f < plane.size(); ++f) {
    for (std::size_t b = 0; b < bins; ++b) t.at(f, b) = plane[f];
  }
  return t;
}

MelSpectrogram crop_frames(const MelSpectrogram& m, std::size_t start, std::size_t count) {
  MelSpectrogram out(count, m.bins, m.config, m.source_ratio);
  std::copy_n(m.data.begin() + static_cast<std::ptrdiff_t>(start * m.bins), count * m.bins, out.data.begin());
  return out;
}

}  // namespace

const char* to_string(MaskKind k) {
  switch (k) {
    case MaskKind::scratch: return "scratch";
    case MaskKind::continuation: return "continuation";
    case MaskKind::completion: return "completion";
  }
  return "?";
}

MaskKind parse_mask_kind(const std::string& s) {
  if (s == "scratch") return MaskKind::scratch;
  if (s == "continuation" || s == "continue") return MaskKind::continuation;
  if (s == "completion" || s == "complete") return MaskKind::completion;
  throw UsageError("unknown generation task '" + s + "'");
}

bool MaskSpec::is_masked(std::size_t frame) const {
  return std::any_of(masked.begin(), masked.end(), [&](const auto& r) { return frame >= r.first && frame < r.second; });
}

std::size_t MaskSpec::masked_frames() const {
  std::size_t n = 0;
  for (const auto& r : masked) n += r.second - r.first;
  return n;
}

MaskSpec make_mask(MaskKind kind, std::size_t total, std::size_t begin, std::size_t end) {
  if (total < kMinFrames) throw DomainError("masks need at least 8 frames, got " + std::to_string(total));
  MaskSpec m{kind, total, {}};
  switch (kind) {
    case MaskKind::scratch:
      m.masked.emplace_back(0, total);
      break;
    case MaskKind::continuation:
      if (begin == 0 || begin > total) {
        throw DomainError("continuation boundary must lie in (0, " + std::to_string(total) + "]");
      }
      if (begin < total) m.masked.emplace_back(begin, total);
      break;
    case MaskKind::completion:
      if (!(0 < begin && begin < end && end < total)) {
        throw DomainError("completion gap must satisfy 0 < begin < end < " + std::to_string(total));
      }
      m.masked.emplace_back(begin, end);
      break;
  }
  return m;
}

MaskSpec make_mask(MaskKind kind, std::size_t total, Rng& rng) {
  if (total < kMinFrames) throw DomainError("masks need at least 8 frames, got " + std::to_string(total));
  if (kind == MaskKind::scratch) return make_mask(kind, total);
  // Draw the masked length inside [ceil(0.25 T), floor(0.75 T)] so the
  // fraction stays in range after rounding.
  const auto lo = static_cast<std::int64_t>(std::ceil(0.25 * static_cast<double>(total)));
  const auto hi = static_cast<std::int64_t>(std::floor(0.75 * static_cast<double>(total)));
  const auto len = static_cast<std::size_t>(rng.uniform_int(lo, hi));
  if (kind == MaskKind::continuation) return make_mask(kind, total, total - len);
  const auto begin = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(total - len - 1)));
  return make_mask(kind, total, begin, begin + len);
}

MaskedCondition apply_mask(const MelSpectrogram& m, const MaskSpec& mask) {
  if (mask.total_frames != m.frames) {
    throw DomainError("mask covers " + std::to_string(mask.total_frames) + " frames, mel has " +
                      std::to_string(m.frames));
  }
  MaskedCondition c{m, std::vector<float>(m.frames, 0.0f)};
  const float floor = m.floor_value();
  for (const auto& [a, b] : mask.masked) {
    for (std::size_t f = a; f < b; ++f) {
      c.plane[f] = 1.0f;
      std::fill_n(c.mel.data.begin() + static_cast<std::ptrdiff_t>(f * m.bins), m.bins, floor);
    }
  }
  return c;
}

std::vector<std::uint8_t> masked_support(const MaskSpec& mask, std::size_t bins) {
  std::vector<std::uint8_t> s(mask.total_frames * bins, 0);
  for (const auto& [a, b] : mask.masked) {
    std::fill(s.begin() + static_cast<std::ptrdiff_t>(a * bins), s.begin() + static_cast<std::ptrdiff_t>(b * bins), 1);
  }
  return s;
}

ComposerModel::ComposerModel(const ComposerConfig& c, const MelConfig& m) : cfg(c), mel(m), dit(c.dit) {
  if (cfg.dit.cond_channels != 2 || cfg.dit.residual_cond) {
    throw ConfigError("the composer DiT takes a masked mel and a mask plane, without residual conditioning");
  }
  if (cfg.dit.bins != static_cast<std::size_t>(mel.n_mels)) throw ConfigError("composer bins must equal the mel bins");
  SpeedRatio check(cfg.ratio);
  (void)check;
}

void ComposerModel::init(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "composer.init"));
  dit.init(rng);
}

void ComposerModel::save(const std::filesystem::path& path) const {
  nn::ParamList<float> ps;
  const_cast<models::Dit<float>&>(dit).collect(ps);
  nn::Checkpoint ck;
  ck.module_kind = kKind;
  write_common_header(ck, mel, cfg.schedule, norm);
  ck.hyperparams["dit"] = cfg.dit;
  ck.hyperparams["ratio"] = cfg.ratio;
  ck.hyperparams["masked_only"] = cfg.masked_only;
  nn::store_params(ck, ps, "dit/");
  ck.save(path);
}

ComposerModel ComposerModel::load(const std::filesystem::path& path, const MelConfig& expected) {
  const auto ck = nn::Checkpoint::load(path);
  if (ck.module_kind != kKind) throw LoadError(path.string() + " holds a " + ck.module_kind + " checkpoint");
  ComposerConfig cfg;
  MelConfig mel;
  MelNorm norm;
  read_common_header(ck, mel, cfg.schedule, norm);
  if (!(mel == expected)) throw LoadError("composer checkpoint mel fingerprint " + mel.fingerprint() +
                                          " does not match " + expected.fingerprint());
  try {
    cfg.dit = ck.hyperparams.at("dit").get<models::DitConfig>();
    cfg.ratio = ck.hyperparams.at("ratio").get<double>();
    cfg.masked_only = ck.hyperparams.at("masked_only").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("malformed composer checkpoint: ") + e.what());
  }
  ComposerModel model(cfg, mel);
  model.norm = norm;
  nn::ParamList<float> ps;
  model.dit.collect(ps);
  nn::restore_params(ck, ps, "dit/");
  return model;
}

ComposerModel train_composer(const DatasetManifest& manifest, const ComposerConfig& cfg, std::uint64_t seed,
                             TrainLog* log) {
  return train_composer(load_tracks(manifest, Split::train, Track::mixture), cfg, seed, log);
}

ComposerModel train_composer(const std::vector<Waveform>& songs, const ComposerConfig& cfg, std::uint64_t seed,
                             TrainLog* log) {
  if (songs.empty()) throw ConfigError("train_composer: no training songs");
  if (cfg.train.steps < 1 || cfg.train.batch < 1) throw ConfigError("training steps and batch must be positive");
  const MelConfig mel = model_mel(songs.front().sample_rate());
  ComposerModel model(cfg, mel);
  model.init(seed);

  std::vector<MelSpectrogram> mels;
  for (const auto& s : songs) {
    auto m = mel_spectrogram(tsm_compress(s, cfg.ratio), mel);
    m.source_ratio = cfg.ratio;
    if (m.frames < kMinFrames) throw ConfigError("training songs are too short for the composer at this ratio");
    mels.push_back(std::move(m));
  }
  model.norm = MelNorm::fit(mels);

  const auto schedule = cfg.schedule.make();
  nn::ParamList<float> ps;
  model.dit.collect(ps);
  nn::Adam<float> opt({.lr = cfg.train.lr});
  Rng rng(derive_seed(seed, "composer.train"));
  if (log != nullptr) *log = TrainLog({"loss"});
  const auto inv_batch = 1.0f / static_cast<float>(cfg.train.batch);

  for (int step = 0; step < cfg.train.steps; ++step) {
    nn::zero_grads(ps);
    double loss = 0.0;
    for (int b = 0; b < cfg.train.batch; ++b) {
      const auto& m = mels[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(mels.size()) - 1))];
      const std::size_t w = std::clamp<std::size_t>(cfg.train.window, kMinFrames, m.frames);
      const auto start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(m.frames - w)));
      const auto clip = crop_frames(m, start, w);
      const auto kind = static_cast<MaskKind>(rng.uniform_int(0, 2));
      const auto mask = make_mask(kind, w, rng);
      const auto cond = apply_mask(clip, mask);
      const auto cond_mel = model.norm.to_tensor(cond.mel);
      const auto plane = plane_tensor(cond.plane, clip.bins);
      const auto support = cfg.masked_only ? masked_support(mask, clip.bins) : std::vector<std::uint8_t>{};
      models::Dit<float>::Cache dc;
      TrainableDenoiser<float> den;
      den.forward = [&](const Tensor<float>& x, double delta) {
        return model.dit.forward(x, {cond_mel, plane}, delta, &dc);
      };
      den.backward = [&](const Tensor<float>& g) {
        Tensor<float> scaled = g;
        for (auto& v : scaled.values()) v *= inv_batch;
        model.dit.backward(scaled, dc);
      };
      loss += refine_loss(den, model.norm.to_tensor(clip), schedule, rng, cfg.masked_only ? &support : nullptr).loss;
    }
    opt.step(ps);
    if (log != nullptr) log->add({loss / cfg.train.batch});
  }
  return model;
}

MelSpectrogram generate(const MaskSpec& mask, const MelSpectrogram* context, const ComposerModel& model,
                        std::uint64_t seed, GenerationStats* stats) {
  const auto t0 = Clock::now();
  const std::size_t frames = mask.total_frames;
  const auto bins = static_cast<std::size_t>(model.mel.n_mels);
  MelSpectrogram base;
  if (mask.kind == MaskKind::scratch) {
    base = MelSpectrogram(frames, bins, model.mel, model.cfg.ratio, static_cast<float>(std::log(model.mel.log_floor)));
  } else {
    if (context == nullptr) throw UsageError(std::string(to_string(mask.kind)) + " needs a context mel");
    if (context->frames != frames) {
      throw DomainError("context has " + std::to_string(context->frames) + " frames, the mask " +
                        std::to_string(frames));
    }
    if (!(context->config == model.mel)) throw LoadError("context mel config does not match the composer checkpoint");
    base = *context;
  }
  const auto cond = apply_mask(base, mask);
  const auto cond_mel = model.norm.to_tensor(cond.mel);
  const auto plane = plane_tensor(cond.plane, bins);

  Consistency known;
  known.values = model.norm.to_tensor(base);
  known.known.resize(frames * bins);
  for (std::size_t f = 0; f < frames; ++f) {
    std::fill_n(known.known.begin() + static_cast<std::ptrdiff_t>(f * bins), bins,
                static_cast<std::uint8_t>(cond.plane[f] == 0.0f));
  }
  const auto schedule = model.cfg.schedule.make();
  Denoiser den = [&](const Tensor<float>& x, double delta) { return model.dit.forward(x, {cond_mel, plane}, delta); };
  Rng rng(derive_seed(seed, "composer.generate"));
  const auto z = sample(den, frames, bins, schedule, rng, &known);

  auto out = model.norm.to_mel(z, model.mel, base.source_ratio);
  const float floor = out.floor_value();
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t b = 0; b < bins; ++b) {
      out.at(f, b) = cond.plane[f] == 0.0f ? base.at(f, b) : std::max(out.at(f, b), floor);
    }
  }
  if (stats != nullptr) {
    stats->composer_tokens += static_cast<std::uint64_t>(model.dit.config().tokens_for(frames) * schedule.steps());
    stats->composer_seconds += since(t0);
  }
  return out;
}

std::size_t compressed_frames(double out_duration_s, double r, const MelConfig& mel) {
  if (!(out_duration_s > 0.0)) throw DomainError("output duration must be positive");
  const auto samples = std::llround(out_duration_s * mel.sample_rate / r);
  return mel.spectral.frames_for(static_cast<std::size_t>(samples));
}

Waveform compose_full(const ComposeRequest& req, const ComposerModel& composer, const RestorationModel& restoration,
                      GenerationStats* stats) {
  const MelConfig& mel = composer.mel;
  if (!(restoration.mel == mel)) throw LoadError("composer and restoration checkpoints use different mel configs");
  const SpeedRatio r(req.ratio);
  const auto out_samples = static_cast<std::size_t>(std::llround(req.out_duration_s * mel.sample_rate));
  const std::size_t frames = compressed_frames(req.out_duration_s, r, mel);
  const double frames_per_second = mel.sample_rate / r / mel.spectral.hop;

  MelSpectrogram context;
  std::size_t visible = 0;
  if (req.task != MaskKind::scratch) {
    if (!req.input) throw UsageError(std::string(to_string(req.task)) + " needs input audio");
    if (req.input->sample_rate() != mel.sample_rate) throw DomainError("input sample rate differs from the model's");
    auto mc = mel_spectrogram(tsm_compress(*req.input, r), mel);
    visible = std::min(mc.frames, frames);
    context = MelSpectrogram(frames, mel.n_mels, mel, r, static_cast<float>(std::log(mel.log_floor)));
    std::copy_n(mc.data.begin(), visible * mc.bins, context.data.begin());
  }
  MaskSpec mask;
  switch (req.task) {
    case MaskKind::scratch:
      mask = make_mask(MaskKind::scratch, frames);
      break;
    case MaskKind::continuation:
      mask = make_mask(MaskKind::continuation, frames, std::max<std::size_t>(1, visible));
      break;
    case MaskKind::completion:
      mask = make_mask(MaskKind::completion, frames,
                       static_cast<std::size_t>(std::llround(req.gap_begin_s * frames_per_second)),
                       static_cast<std::size_t>(std::llround(req.gap_end_s * frames_per_second)));
      break;
  }
  auto z_c = generate(mask, req.task == MaskKind::scratch ? nullptr : &context, composer,
                      derive_seed(req.seed, "compose.generate"), stats);
  z_c.source_ratio = r;

  auto t0 = Clock::now();
  std::uint64_t tokens = 0;
  const auto z = restore(z_c, r, restoration, derive_seed(req.seed, "compose.restore"), req.restore_steps, &tokens);
  if (stats != nullptr) {
    stats->restoration_tokens += tokens;
    stats->restoration_seconds += since(t0);
  }
  t0 = Clock::now();
  auto audio = vocode(z).resized(out_samples);
  if (stats != nullptr) stats->vocoder_seconds += since(t0);
  return audio;
}

}  // namespace sqz
