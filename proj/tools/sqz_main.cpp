// sqz command-line entry point.

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sqz/config.hpp"
#include "sqz/error.hpp"
#include "sqz/metrics.hpp"
#include "sqz/pipeline.hpp"
#include "sqz/timescale.hpp"

namespace fs = std::filesystem;
using namespace sqz;

namespace {

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

fs::path or_default(const std::string& given, const fs::path& fallback) { return given.empty() ? fallback : fs::path(given); }

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

// A checkpoint must have been trained with the shapes and schedule the
// resolved config describes.
void require_same(const std::string& what, const nlohmann::json& ckpt, const nlohmann::json& cfg) {
  if (ckpt != cfg) throw LoadError(what + " in checkpoint " + ckpt.dump() + " differs from config " + cfg.dump());
}

RestorationModel load_restoration(const fs::path& path, const RunConfig& cfg) {
  auto m = RestorationModel::load(path, cfg.mel());
  const auto want = cfg.restoration_config();
  require_same("restoration prior", m.cfg.prior, want.prior);
  require_same("restoration refiner", m.cfg.refiner, want.refiner);
  require_same("restoration schedule", m.cfg.schedule, want.schedule);
  return m;
}

ComposerModel load_composer(const fs::path& path, const RunConfig& cfg) {
  auto m = ComposerModel::load(path, cfg.mel());
  const auto want = cfg.composer_config();
  require_same("composer dit", m.cfg.dit, want.dit);
  require_same("composer schedule", m.cfg.schedule, want.schedule);
  return m;
}

SagModel load_sag(const fs::path& path, const RunConfig& cfg) {
  auto m = SagModel::load(path, cfg.mel());
  const auto want = cfg.sag_config();
  require_same("sag prior", m.cfg.prior, want.prior);
  require_same("sag dit", m.cfg.dit, want.dit);
  require_same("sag schedule", m.cfg.schedule, want.schedule);
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sqz: music generation in a time-compressed mel domain"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> overrides;
  std::string seed_flag;
  std::string ratio_flag;
  app.add_option("--config", config_path, "TOML-style key = value file");
  app.add_option("--set", overrides, "override one config key, key=value (repeatable)");
  app.add_option("--seed", seed_flag, "root seed");
  app.add_option("--ratio", ratio_flag, "squeeze ratio r");

  // Each subcommand fills `action`; config resolution runs once after parsing.
  std::function<void(RunConfig&)> action;
  std::vector<std::pair<std::string, std::string>> flag_keys;  // flags that map onto config keys
  auto key_flag = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(
        flag, [&flag_keys, key](const std::string& v) { flag_keys.emplace_back(key, v); }, help);
  };

  // dataset synth
  auto* dataset = app.add_subcommand("dataset", "toy dataset tools");
  dataset->require_subcommand(1);
  auto* synth = dataset->add_subcommand("synth", "synthesise toy songs with an 8:2 train/test split");
  int songs = 10;
  double dur = 8.0;
  std::string data_out;
  synth->add_option("--songs", songs, "number of songs")->check(CLI::PositiveNumber);
  synth->add_option("--dur", dur, "song duration in seconds");
  synth->add_option("--out", data_out, "output directory (default paths.data)");
  key_flag(synth, "--sr", "sample_rate", "sample rate");
  synth->callback([&] {
    action = [&](RunConfig& cfg) {
      const auto dir = or_default(data_out, cfg.data_dir);
      const auto m = make_dataset(cfg.seed, songs, dur, cfg.sample_rate, dir);
      std::cout << "wrote " << m.split(Split::train).size() << " train / " << m.split(Split::test).size()
                << " test songs to " << dir.string() << "\n";
    };
  });

  // squeeze
  auto* sq = app.add_subcommand("squeeze", "time-compress audio and write its mel");
  std::string sq_in, sq_out, sq_wav, sq_mode = "pv";
  sq->add_option("--in", sq_in, "input wav")->required();
  sq->add_option("--out", sq_out, "compressed mel (SQZM)")->required();
  sq->add_option("--wav-out", sq_wav, "also write the compressed audio");
  sq->add_option("--mode", sq_mode, "pv (phase vocoder) or naive")->check(CLI::IsMember({"pv", "naive"}));
  sq->callback([&] {
    action = [&](RunConfig& cfg) {
      const auto w = read_wav(sq_in);
      const auto c = tsm_compress(w, cfg.ratio, sq_mode == "pv" ? TsmMode::phase_vocoder : TsmMode::naive_resample);
      const auto m = mel_spectrogram(c, model_mel(w.sample_rate()));
      ensure_parent(sq_out);
      write_sqzm(m, sq_out);
      if (!sq_wav.empty()) {
        ensure_parent(sq_wav);
        write_wav(c, sq_wav);
      }
      std::cout << "compressed " << w.duration_seconds() << " s to " << m.frames << " frames\n";
    };
  });

  // restore
  auto* rs = app.add_subcommand("restore", "restore a compressed mel (SQZM) or compressed wav to full-length audio");
  std::string rs_in, rs_out, rs_ckpt, rs_mel;
  int rs_steps = 0;
  rs->add_option("--in", rs_in, "compressed mel (.sqzm) or compressed audio (.wav)")->required();
  rs->add_option("--out", rs_out, "output wav")->required();
  rs->add_option("--restoration", rs_ckpt, "restoration checkpoint");
  rs->add_option("--mel-out", rs_mel, "also write the restored mel (SQZM)");
  rs->add_option("--steps", rs_steps, "sampler steps (default: checkpoint schedule)");
  rs->callback([&] {
    action = [&](RunConfig& cfg) {
      const auto model = load_restoration(or_default(rs_ckpt, cfg.checkpoint_dir / "restoration.ckpt"), cfg);
      MelSpectrogram m_c = fs::path(rs_in).extension() == ".wav" ? mel_spectrogram(read_wav(rs_in), cfg.mel())
                                                                 : read_sqzm(rs_in, cfg.mel());
      m_c.source_ratio = cfg.ratio;
      std::uint64_t tokens = 0;
      const auto z = restore(m_c, cfg.ratio, model, derive_seed(cfg.seed, "cli.restore"), rs_steps, &tokens);
      ensure_parent(rs_out);
      write_wav(vocode(z), rs_out);
      if (!rs_mel.empty()) write_sqzm(z, rs_mel);
      std::cout << "restored " << m_c.frames << " -> " << z.frames << " frames (" << tokens << " frame-tokens)\n";
    };
  });

  // train restoration|composer|sag
  auto* train = app.add_subcommand("train", "train a model on the dataset's train split");
  train->require_subcommand(1);
  std::string tr_data, tr_out, tr_log;
  auto train_kind = [&](const std::string& kind, const std::string& help) {
    auto* sub = train->add_subcommand(kind, help);
    sub->add_option("--data", tr_data, "dataset directory (default paths.data)");
    sub->add_option("--out", tr_out, "checkpoint path (default paths.checkpoints/" + kind + ".ckpt)");
    sub->add_option("--log", tr_log, "loss CSV (default paths.output/train_" + kind + ".csv)");
    key_flag(sub, "--steps", "train.steps", "training steps");
    key_flag(sub, "--lr", "train.lr", "learning rate");
    key_flag(sub, "--batch", "train.batch", "clips per step");
    sub->callback([&, kind] {
      action = [&, kind](RunConfig& cfg) {
        const auto manifest = read_manifest(or_default(tr_data, cfg.data_dir) / "manifest.json");
        const auto out = or_default(tr_out, cfg.checkpoint_dir / (kind + ".ckpt"));
        const auto log_path = or_default(tr_log, cfg.output_dir / ("train_" + kind + ".csv"));
        ensure_parent(out);
        ensure_parent(log_path);
        TrainLog log;
        if (kind == "restoration") {
          train_restoration(manifest, cfg.restoration_config(), cfg.seed, &log).save(out);
        } else if (kind == "composer") {
          train_composer(manifest, cfg.composer_config(), cfg.seed, &log).save(out);
        } else {
          train_sag(manifest, cfg.sag_config(), cfg.seed, &log).save(out);
        }
        log.write_csv(log_path);
        std::cout << "saved " << out.string() << "; loss log " << log_path.string() << "\n";
        if (log.size() >= 100) std::cout << "last-50 / first-50 mean loss: " << log.tail_to_head() << "\n";
      };
    });
  };
  train_kind("restoration", "CNN prior + DiT refiner");
  train_kind("composer", "masked compressed-domain DiT");
  train_kind("sag", "singing accompaniment prior + DiT");

  // generate scratch|continue|complete
  auto* gen = app.add_subcommand("generate", "compose audio in the compressed domain");
  gen->require_subcommand(1);
  std::string g_in, g_out, g_comp, g_rest;
  double g_dur = 10.0, g_gap_begin = 0.0, g_gap_end = 0.0;
  int g_steps = 0;
  auto gen_kind = [&](const std::string& name, MaskKind kind, const std::string& help) {
    auto* sub = gen->add_subcommand(name, help);
    sub->add_option("--dur", g_dur, "output duration in seconds");
    sub->add_option("--out", g_out, "output wav")->required();
    sub->add_option("--composer", g_comp, "composer checkpoint");
    sub->add_option("--restoration", g_rest, "restoration checkpoint");
    sub->add_option("--steps", g_steps, "restoration sampler steps (default: checkpoint schedule)");
    if (kind != MaskKind::scratch) sub->add_option("--in", g_in, "input audio")->required();
    if (kind == MaskKind::completion) {
      sub->add_option("--gap-begin", g_gap_begin, "start of the regenerated span, seconds")->required();
      sub->add_option("--gap-end", g_gap_end, "end of the regenerated span, seconds")->required();
    }
    sub->callback([&, kind] {
      action = [&, kind](RunConfig& cfg) {
        const auto composer = load_composer(or_default(g_comp, cfg.checkpoint_dir / "composer.ckpt"), cfg);
        const auto restoration =
            load_restoration(or_default(g_rest, cfg.checkpoint_dir / "restoration.ckpt"), cfg);
        ComposeRequest req;
        req.task = kind;
        if (kind != MaskKind::scratch) req.input = read_wav(g_in);
        req.ratio = cfg.ratio;
        req.out_duration_s = g_dur;
        req.gap_begin_s = g_gap_begin;
        req.gap_end_s = g_gap_end;
        req.seed = cfg.seed;
        req.restore_steps = g_steps;
        GenerationStats stats;
        const auto audio = compose_full(req, composer, restoration, &stats);
        ensure_parent(g_out);
        write_wav(audio, g_out);
        std::cout << "wrote " << audio.duration_seconds() << " s; composer frame-tokens " << stats.composer_tokens
                  << ", refiner frame-tokens " << stats.restoration_tokens << "\n";
      };
    });
  };
  gen_kind("scratch", MaskKind::scratch, "generate from nothing");
  gen_kind("continue", MaskKind::continuation, "continue the input audio");
  gen_kind("complete", MaskKind::completion, "regenerate a span of the input audio");

  // sag generate
  auto* sag = app.add_subcommand("sag", "singing accompaniment generation");
  sag->require_subcommand(1);
  auto* sag_gen = sag->add_subcommand("generate", "generate an accompaniment for a vocal");
  std::string s_vocal, s_out, s_ckpt, s_rest;
  int s_steps = 0;
  sag_gen->add_option("--vocal", s_vocal, "vocal wav")->required();
  sag_gen->add_option("--out", s_out, "output wav")->required();
  sag_gen->add_option("--sag", s_ckpt, "SAG checkpoint");
  sag_gen->add_option("--restoration", s_rest, "restoration checkpoint");
  sag_gen->add_option("--steps", s_steps, "restoration sampler steps (default: checkpoint schedule)");
  sag_gen->callback([&] {
    action = [&](RunConfig& cfg) {
      const auto model = load_sag(or_default(s_ckpt, cfg.checkpoint_dir / "sag.ckpt"), cfg);
      const auto restoration =
          load_restoration(or_default(s_rest, cfg.checkpoint_dir / "restoration.ckpt"), cfg);
      const auto audio = generate_accompaniment(read_wav(s_vocal), cfg.ratio, model, restoration, cfg.seed, s_steps);
      ensure_parent(s_out);
      write_wav(audio, s_out);
      std::cout << "wrote " << audio.duration_seconds() << " s accompaniment\n";
    };
  });

  // eval / bench
  std::string b_data, b_rest, b_comp, b_sag, b_out, b_ratios = "1,4,8";
  int b_steps = 0;
  auto report_cmd = [&](const std::string& name, bool full, const std::string& help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--data", b_data, "dataset directory (default paths.data)");
    sub->add_option("--restoration", b_rest, "restoration checkpoint");
    sub->add_option("--ratios", b_ratios, "comma-separated ratios for the squeeze rows");
    sub->add_option("--out", b_out, "report path without extension (default paths.output/" + name + ")");
    sub->add_option("--steps", b_steps, "restoration sampler steps (default: checkpoint schedule)");
    if (full) {
      sub->add_option("--composer", b_comp, "composer checkpoint (adds a compose row)");
      sub->add_option("--sag", b_sag, "SAG checkpoint (adds a sag row)");
    }
    sub->callback([&, name, full] {
      action = [&, name, full](RunConfig& cfg) {
        RunConfig tmp = cfg;
        tmp.set("restoration.ratios", b_ratios);
        const auto dir = or_default(b_data, cfg.data_dir);
        const auto manifest = read_manifest(dir / "manifest.json");
        const auto restoration =
            load_restoration(or_default(b_rest, cfg.checkpoint_dir / "restoration.ckpt"), cfg);
        std::optional<ComposerModel> composer;
        std::optional<SagModel> sagm;
        if (full && !b_comp.empty()) composer = load_composer(b_comp, cfg);
        if (full && !b_sag.empty()) sagm = load_sag(b_sag, cfg);
        BenchModels models{&restoration, composer ? &*composer : nullptr, sagm ? &*sagm : nullptr};
        BenchOptions opts{tmp.restoration.ratios, cfg.seed, b_steps, dir.string()};
        const auto out = or_default(b_out, cfg.output_dir / name);
        ensure_parent(out);
        const auto report = bench_report(manifest, models, opts, out);
        std::cout << report.to_markdown();
      };
    });
  };
  report_cmd("eval", false, "distance metrics of the squeeze-restore pipeline over the test split");
  report_cmd("bench", true, "metrics plus real-time factors, optionally for composition and SAG");

  // faps
  auto* fp = app.add_subcommand("faps", "audio feature frames per second");
  double fp_sr = 24000, fp_hop = 256;
  fp->add_option("--sr", fp_sr, "sample rate");
  fp->add_option("--hop", fp_hop, "hop size");
  fp->callback([&] {
    action = [&](RunConfig& cfg) { std::cout << fixed2(faps(fp_sr, fp_hop, cfg.ratio)) << "\n"; };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  RunConfig cfg;
  try {
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    for (const auto& [key, value] : flag_keys) cfg.set(key, value);
    if (!seed_flag.empty()) cfg.set("seed", seed_flag);
    if (!ratio_flag.empty()) cfg.set("ratio", ratio_flag);
    cfg.validate();
    std::cerr << "# resolved config (fingerprint " << cfg.fingerprint() << ")\n" << cfg.to_text();
    std::cerr << "# seed " << cfg.seed << "\n";
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }

  try {
    action(cfg);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
