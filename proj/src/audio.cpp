#include "sqz/audio.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <span>

#include <nlohmann/json.hpp>

#include "sqz/error.hpp"
#include "sqz/rng.hpp"

namespace sqz {

static_assert(std::endian::native == std::endian::little, "wav I/O assumes a little-endian host");

Waveform::Waveform(std::vector<float> samples, int sample_rate)
    : samples_(std::move(samples)), sample_rate_(sample_rate) {
  if (sample_rate_ <= 0) throw DomainError("waveform sample rate must be positive");
  for (float s : samples_) {
    if (!std::isfinite(s)) throw DomainError("waveform contains a non-finite sample");
  }
}

Waveform Waveform::resized(std::size_t n) const {
  std::vector<float> out(n, 0.0f);
  std::copy_n(samples_.begin(), std::min(n, samples_.size()), out.begin());
  return Waveform(std::move(out), sample_rate_);
}

// ---------------------------------------------------------------------------
// RIFF/WAVE

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

template <typename T>
T load_le(const std::uint8_t* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw FormatError(path.string() + ": not a RIFF/WAVE file");
  }

  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  std::uint16_t bits = 0;
  bool have_fmt = false;
  const std::uint8_t* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const auto size = load_le<std::uint32_t>(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) {
      // Tolerate a truncated trailing data chunk, which streaming writers leave behind.
      if (std::memcmp(chunk, "data", 4) != 0) throw FormatError(path.string() + ": truncated chunk");
    }
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) throw FormatError(path.string() + ": fmt chunk too short");
      format = load_le<std::uint16_t>(chunk + 8);
      channels = load_le<std::uint16_t>(chunk + 10);
      rate = load_le<std::uint32_t>(chunk + 12);
      bits = load_le<std::uint16_t>(chunk + 22);
      if (format == kFormatExtensible) {
        if (avail < 26) throw FormatError(path.string() + ": extensible fmt chunk too short");
        format = load_le<std::uint16_t>(chunk + 8 + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = avail;
    }
    pos = body + size + (size & 1u);
  }

  if (!have_fmt) throw FormatError(path.string() + ": missing fmt chunk");
  if (data == nullptr) throw FormatError(path.string() + ": missing data chunk");
  if (rate == 0) throw FormatError(path.string() + ": zero sample rate");
  if (channels != 1 && channels != 2) {
    throw UnsupportedError(path.string() + ": only mono or stereo is supported");
  }
  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool f32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !f32) throw UnsupportedError(path.string() + ": only PCM16 and float32 are supported");

  const std::size_t width = bits / 8;
  const std::size_t frames = data_size / (width * channels);
  std::vector<float> samples(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const std::uint8_t* p = data + (i * channels + c) * width;
      acc += pcm16 ? load_le<std::int16_t>(p) / 32768.0 : static_cast<double>(load_le<float>(p));
    }
    samples[i] = static_cast<float>(acc / channels);
  }
  return Waveform(std::move(samples), static_cast<int>(rate));
}

void write_wav(const Waveform& w, const std::filesystem::path& path, WavEncoding encoding) {
  const bool pcm = encoding == WavEncoding::pcm16;
  const std::uint16_t bits = pcm ? 16 : 32;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.size() * bits / 8);
  const auto rate = static_cast<std::uint32_t>(w.sample_rate());

  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_le<std::uint32_t>(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_le<std::uint32_t>(out, 16);
  put_le<std::uint16_t>(out, pcm ? kFormatPcm : kFormatFloat);
  put_le<std::uint16_t>(out, 1);
  put_le<std::uint32_t>(out, rate);
  put_le<std::uint32_t>(out, rate * bits / 8);
  put_le<std::uint16_t>(out, bits / 8);
  put_le<std::uint16_t>(out, bits);
  put_tag(out, "data");
  put_le<std::uint32_t>(out, data_bytes);
  for (float s : w.samples()) {
    if (pcm) {
      const double q = std::round(std::clamp(static_cast<double>(s), -1.0, 1.0) * 32768.0);
      put_le<std::int16_t>(out, static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0)));
    } else {
      put_le<float>(out, s);
    }
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Synthesis

Waveform synth_tone(double freq_hz, double duration_s, int sample_rate, double amplitude) {
  if (sample_rate <= 0) throw DomainError("sample rate must be positive");
  if (!(freq_hz > 0.0) || !(freq_hz < sample_rate / 2.0)) {
    throw DomainError("tone frequency must lie in (0, nyquist)");
  }
  if (!(amplitude > 0.0) || amplitude > 1.0) throw DomainError("amplitude must lie in (0, 1]");
  if (duration_s < 0.0) throw DomainError("duration must be non-negative");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  std::vector<float> s(n);
  const double w = 2.0 * std::numbers::pi * freq_hz / sample_rate;
  for (std::size_t i = 0; i < n; ++i) s[i] = static_cast<float>(amplitude * std::sin(w * static_cast<double>(i)));
  return Waveform(std::move(s), sample_rate);
}

namespace {

double midi_to_hz(double midi) { return 440.0 * std::pow(2.0, (midi - 69.0) / 12.0); }

constexpr std::array<int, 7> kMajorScale = {0, 2, 4, 5, 7, 9, 11};

/// Adds a harmonic tone into buf over [start, end) samples with a linear ADSR.
struct NoteShape {
  double attack = 0.02;
  double decay = 0.1;
  double sustain = 0.6;
  double release = 0.08;
  double vibrato_hz = 0.0;
  double vibrato_depth = 0.0;  // fraction of the fundamental
};

void add_note(std::vector<double>& buf, int sr, double t0, double t1, double f0, double amp,
              std::span<const double> harmonics, const NoteShape& shape) {
  const auto start = static_cast<std::size_t>(std::max(0.0, std::round(t0 * sr)));
  const auto end = std::min(buf.size(), static_cast<std::size_t>(std::round(t1 * sr)));
  if (end <= start) return;
  const double len = static_cast<double>(end - start) / sr;
  double phase = 0.0;
  for (std::size_t i = start; i < end; ++i) {
    const double t = static_cast<double>(i - start) / sr;
    double env;
    if (t < shape.attack) {
      env = t / shape.attack;
    } else if (t < shape.attack + shape.decay) {
      env = 1.0 - (1.0 - shape.sustain) * (t - shape.attack) / shape.decay;
    } else {
      env = shape.sustain;
    }
    const double remaining = len - t;
    if (remaining < shape.release) env *= remaining / shape.release;
    const double f = f0 * (1.0 + shape.vibrato_depth * std::sin(2.0 * std::numbers::pi * shape.vibrato_hz * t));
    phase += 2.0 * std::numbers::pi * f / sr;
    double v = 0.0;
    for (std::size_t h = 0; h < harmonics.size(); ++h) {
      if (f0 * static_cast<double>(h + 1) < sr / 2.0) v += harmonics[h] * std::sin(phase * static_cast<double>(h + 1));
    }
    buf[i] += amp * env * v;
  }
}

std::vector<float> to_float(const std::vector<double>& v) { return {v.begin(), v.end()}; }

}  // namespace

ToySong synth_toy_song(std::uint64_t seed, double duration_s, int sample_rate) {
  if (duration_s < 2.0) throw DomainError("toy songs need at least 2 s");
  if (sample_rate != 16000 && sample_rate != 24000) throw DomainError("toy songs support 16000 or 24000 Hz");

  Rng rng(derive_seed(seed, "toy-song"));
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  std::vector<double> vocal(n, 0.0);
  std::vector<double> accomp(n, 0.0);

  const double bpm = rng.uniform(90.0, 130.0);
  const double beat = 60.0 / bpm;
  const double bar = 4.0 * beat;
  const int key = static_cast<int>(rng.uniform_int(45, 56));  // accompaniment root octave

  // I-IV-V-vi family, always opening on the tonic.
  constexpr std::array<int, 4> kDegrees = {0, 3, 4, 5};
  std::vector<int> chords;
  const auto n_bars = static_cast<std::size_t>(std::ceil(duration_s / bar));
  for (std::size_t b = 0; b < n_bars; ++b) chords.push_back(b == 0 ? 0 : kDegrees[rng.uniform_int(0, 3)]);

  auto scale_note = [&](int degree) {
    const int octave = degree >= 0 ? degree / 7 : -((6 - degree) / 7);
    const int idx = degree - octave * 7;
    return key + 12 * octave + kMajorScale[static_cast<std::size_t>(idx)];
  };

  const std::array<double, 3> accomp_harm = {1.0, 0.5, 0.25};
  const NoteShape pad{.attack = 0.03, .decay = 0.15, .sustain = 0.7, .release = 0.1};
  for (std::size_t b = 0; b < n_bars; ++b) {
    const double t0 = static_cast<double>(b) * bar;
    const double t1 = std::min(duration_s, t0 + bar);
    for (int k = 0; k < 3; ++k) {
      add_note(accomp, sample_rate, t0, t1, midi_to_hz(scale_note(chords[b] + 2 * k)), 0.08,
               accomp_harm, pad);
    }
  }

  // Melody: chord tones two octaves up, one note per beat, with rests. The
  // intro stays silent so every song carries a vocal-free span over accompaniment.
  const double intro = std::max(0.75, 2.0 * beat);
  const std::array<double, 4> vocal_harm = {1.0, 0.45, 0.2, 0.1};
  const NoteShape voice{.attack = 0.015, .decay = 0.05, .sustain = 0.85, .release = 0.03,
                        .vibrato_hz = 5.0, .vibrato_depth = 0.006};
  const double outro = duration_s >= 4.0 ? 0.5 : 0.0;
  for (double t = std::ceil(intro / beat) * beat; t + beat <= duration_s - outro + 1e-9; t += beat) {
    const auto b = std::min(n_bars - 1, static_cast<std::size_t>(t / bar));
    const bool rest = rng.uniform() < 0.15;
    const int tone = static_cast<int>(rng.uniform_int(0, 2));
    if (rest) continue;
    const int midi = scale_note(chords[b] + 2 * tone) + 24;
    add_note(vocal, sample_rate, t, t + 0.92 * beat, midi_to_hz(midi), 0.18, vocal_harm, voice);
  }

  ToySong song;
  song.vocal = Waveform(to_float(vocal), sample_rate);
  song.accompaniment = Waveform(to_float(accomp), sample_rate);
  // Clamp in float so the mixture is exactly the clamped sum of the stored tracks.
  std::vector<float> mixf(n);
  for (std::size_t i = 0; i < n; ++i) {
    mixf[i] = std::clamp(song.vocal[i] + song.accompaniment[i], -1.0f, 1.0f);
  }
  song.mixture = Waveform(std::move(mixf), sample_rate);
  song.seed = seed;
  song.duration_s = duration_s;
  return song;
}

// ---------------------------------------------------------------------------
// Dataset

std::vector<const ManifestEntry*> DatasetManifest::split(Split s) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries) {
    if (e.split == s) out.push_back(&e);
  }
  return out;
}

DatasetManifest make_dataset(std::uint64_t seed, int n_songs, double duration_s, int sample_rate,
                             const std::filesystem::path& out_dir) {
  if (n_songs < 5) throw DomainError("a dataset needs at least 5 songs");
  std::filesystem::create_directories(out_dir);

  const auto n = static_cast<std::size_t>(n_songs);
  const auto n_train = static_cast<std::size_t>(std::ceil(0.8 * static_cast<double>(n_songs) - 1e-9));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "dataset-split"));
  for (std::size_t i = n - 1; i > 0; --i) {
    std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
  }
  std::vector<Split> split(n, Split::test);
  for (std::size_t i = 0; i < n_train; ++i) split[order[i]] = Split::train;

  DatasetManifest m;
  m.seed = seed;
  m.root = out_dir;
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "song_%03zu", i);
    const ToySong song = synth_toy_song(derive_seed(seed, i), duration_s, sample_rate);
    ManifestEntry e;
    e.id = id;
    e.vocal = e.id + "_vocal.wav";
    e.accompaniment = e.id + "_accompaniment.wav";
    e.mixture = e.id + "_mixture.wav";
    e.duration_s = duration_s;
    e.split = split[i];
    write_wav(song.vocal, out_dir / e.vocal);
    write_wav(song.accompaniment, out_dir / e.accompaniment);
    write_wav(song.mixture, out_dir / e.mixture);
    m.entries.push_back(std::move(e));
  }
  write_manifest(m, out_dir / "manifest.json");
  return m;
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  nlohmann::json j;
  j["version"] = 1;
  j["seed"] = m.seed;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : m.entries) {
    j["entries"].push_back({{"id", e.id},
                            {"vocal", e.vocal.generic_string()},
                            {"accompaniment", e.accompaniment.generic_string()},
                            {"mixture", e.mixture.generic_string()},
                            {"duration_s", e.duration_s},
                            {"split", e.split == Split::train ? "train" : "test"}});
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (j.value("version", 0) != 1) throw FormatError(path.string() + ": unsupported manifest version");
  DatasetManifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.root = path.parent_path();
  for (const auto& je : j.at("entries")) {
    ManifestEntry e;
    e.id = je.at("id").get<std::string>();
    e.vocal = je.value("vocal", "");
    e.accompaniment = je.value("accompaniment", "");
    e.mixture = je.at("mixture").get<std::string>();
    e.duration_s = je.at("duration_s").get<double>();
    const auto s = je.at("split").get<std::string>();
    if (s != "train" && s != "test") throw FormatError(path.string() + ": bad split '" + s + "'");
    e.split = s == "train" ? Split::train : Split::test;
    m.entries.push_back(std::move(e));
  }
  return m;
}

}  // namespace sqz
