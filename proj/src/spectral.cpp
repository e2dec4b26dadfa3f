#include "sqz/spectral.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <sstream>
#include <tuple>

#include <Eigen/Dense>

#include "fft.hpp"
#include "sqz/error.hpp"

namespace sqz {

void SpectralConfig::validate() const {
  if (fft_size <= 0 || !std::has_single_bit(static_cast<unsigned>(fft_size))) {
    throw DomainError("fft_size must be a positive power of two");
  }
  if (hop <= 0 || hop > fft_size) throw DomainError("hop must lie in (0, fft_size]");
}

void MelConfig::validate() const {
  spectral.validate();
  if (sample_rate <= 0) throw DomainError("mel sample rate must be positive");
  if (n_mels <= 0) throw DomainError("n_mels must be positive");
  if (!(fmin >= 0.0) || !(fmax > fmin) || fmax > sample_rate / 2.0 + 1e-9) {
    throw DomainError("mel band must satisfy 0 <= fmin < fmax <= nyquist");
  }
  if (!(log_floor > 0.0)) throw DomainError("log floor must be positive");
}

std::string MelConfig::fingerprint() const {
  std::ostringstream os;
  os.precision(17);
  os << "mel:sr=" << sample_rate << ",fft=" << spectral.fft_size << ",hop=" << spectral.hop
     << ",n=" << n_mels << ",fmin=" << fmin << ",fmax=" << fmax << ",floor=" << log_floor;
  return os.str();
}

MelConfig model_mel(int sample_rate) {
  MelConfig c;
  c.spectral = {1024, 256};
  c.sample_rate = sample_rate;
  c.fmax = sample_rate / 2.0;
  return c;
}

MelConfig metric_mel(int sample_rate) {
  MelConfig c;
  c.spectral = {2048, 512};
  c.sample_rate = sample_rate;
  c.fmax = sample_rate / 2.0;
  return c;
}

namespace detail {

const FftPlans& fft_plans(int n) {
  static std::mutex mu;
  static std::map<int, FftPlans> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<double> real(static_cast<std::size_t>(n));
  std::vector<fftw_complex> cplx(static_cast<std::size_t>(n / 2 + 1));
  FftPlans p;
  p.forward = fftw_plan_dft_r2c_1d(n, real.data(), cplx.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
  p.inverse = fftw_plan_dft_c2r_1d(n, cplx.data(), real.data(),
                                   FFTW_ESTIMATE | FFTW_UNALIGNED | FFTW_DESTROY_INPUT);
  return cache.emplace(n, p).first->second;
}

}  // namespace detail

namespace {

std::vector<double> hann(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

/// numpy-style 'reflect' index for any signal length >= 1.
std::size_t reflect_index(std::ptrdiff_t i, std::size_t len) {
  if (len == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (len - 1));
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<std::ptrdiff_t>(len)) m = period - m;
  return static_cast<std::size_t>(m);
}

}  // namespace

ComplexSpec stft(const Waveform& w, const SpectralConfig& cfg) {
  cfg.validate();
  const std::size_t n = static_cast<std::size_t>(cfg.fft_size);
  const std::size_t len = w.size();
  ComplexSpec out;
  out.config = cfg;
  out.bins = n / 2 + 1;
  out.frames = cfg.frames_for(len);
  out.data.assign(out.frames * out.bins, {});
  if (len == 0) return out;

  const auto window = hann(cfg.fft_size);
  const auto& plan = detail::fft_plans(cfg.fft_size);
  std::vector<double> frame(n);
  std::vector<std::complex<double>> buf(out.bins);
  const auto half = static_cast<std::ptrdiff_t>(n / 2);
  const auto& s = w.samples();
  for (std::size_t f = 0; f < out.frames; ++f) {
    const auto start = static_cast<std::ptrdiff_t>(f) * cfg.hop - half;
    for (std::size_t i = 0; i < n; ++i) {
      frame[i] = window[i] * s[reflect_index(start + static_cast<std::ptrdiff_t>(i), len)];
    }
    fftw_execute_dft_r2c(plan.forward, frame.data(), reinterpret_cast<fftw_complex*>(buf.data()));
    std::copy(buf.begin(), buf.end(), out.data.begin() + static_cast<std::ptrdiff_t>(f * out.bins));
  }
  return out;
}

Waveform istft(const ComplexSpec& spec, const SpectralConfig& cfg, int sample_rate, std::size_t length) {
  cfg.validate();
  if (!(spec.config == cfg) || spec.bins != static_cast<std::size_t>(cfg.bins())) {
    throw DomainError("istft config does not match the spectrogram's config");
  }
  const std::size_t n = static_cast<std::size_t>(cfg.fft_size);
  const std::size_t hop = static_cast<std::size_t>(cfg.hop);
  if (length == static_cast<std::size_t>(-1)) length = spec.frames > 0 ? (spec.frames - 1) * hop : 0;
  const std::size_t padded = (spec.frames > 0 ? (spec.frames - 1) * hop : 0) + n;
  std::vector<double> acc(std::max(padded, length + n), 0.0);
  std::vector<double> norm(acc.size(), 0.0);

  const auto window = hann(cfg.fft_size);
  const auto& plan = detail::fft_plans(cfg.fft_size);
  std::vector<std::complex<double>> buf(spec.bins);
  std::vector<double> frame(n);
  for (std::size_t f = 0; f < spec.frames; ++f) {
    std::copy_n(spec.data.begin() + static_cast<std::ptrdiff_t>(f * spec.bins), spec.bins, buf.begin());
    fftw_execute_dft_c2r(plan.inverse, reinterpret_cast<fftw_complex*>(buf.data()), frame.data());
    for (std::size_t i = 0; i < n; ++i) {
      acc[f * hop + i] += window[i] * frame[i] / static_cast<double>(n);
      norm[f * hop + i] += window[i] * window[i];
    }
  }
  std::vector<float> out(length, 0.0f);
  const std::size_t half = n / 2;
  for (std::size_t i = 0; i < length; ++i) {
    const double d = norm[i + half];
    out[i] = d > 1e-10 ? static_cast<float>(acc[i + half] / d) : 0.0f;
  }
  return Waveform(std::move(out), sample_rate);
}

MagnitudeSpec magnitude(const ComplexSpec& spec) {
  MagnitudeSpec m;
  m.frames = spec.frames;
  m.bins = spec.bins;
  m.config = spec.config;
  m.data.resize(spec.data.size());
  for (std::size_t i = 0; i < spec.data.size(); ++i) m.data[i] = std::abs(spec.data[i]);
  return m;
}

// ---------------------------------------------------------------------------
// Mel

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::unique_ptr<MelFilterbank> build_filterbank(const MelConfig& cfg) {
  auto fb = std::make_unique<MelFilterbank>();
  fb->n_mels = static_cast<std::size_t>(cfg.n_mels);
  fb->bins = static_cast<std::size_t>(cfg.spectral.bins());
  fb->weights.assign(fb->n_mels * fb->bins, 0.0);

  const double lo = hz_to_mel(cfg.fmin);
  const double hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(fb->n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(fb->n_mels + 1));
  }
  for (std::size_t m = 0; m < fb->n_mels; ++m) {
    const double left = edges[m];
    const double centre = edges[m + 1];
    const double right = edges[m + 2];
    for (std::size_t k = 0; k < fb->bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.spectral.fft_size;
      double v = 0.0;
      if (f > left && f <= centre) {
        v = (f - left) / (centre - left);
      } else if (f > centre && f < right) {
        v = (right - f) / (right - centre);
      }
      fb->weights[m * fb->bins + k] = v;
    }
  }

  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> w(fb->weights.data(), static_cast<Eigen::Index>(fb->n_mels),
                          static_cast<Eigen::Index>(fb->bins));
  const Mat pinv = w.completeOrthogonalDecomposition().pseudoInverse();
  fb->pinv.assign(pinv.data(), pinv.data() + pinv.size());
  return fb;
}

}  // namespace

double MelFilterbank::pinv_inf_norm() const {
  double best = 0.0;
  for (std::size_t k = 0; k < bins; ++k) {
    double row = 0.0;
    for (std::size_t m = 0; m < n_mels; ++m) row += std::abs(p(k, m));
    best = std::max(best, row);
  }
  return best;
}

const MelFilterbank& mel_filterbank(const MelConfig& cfg) {
  cfg.validate();
  static std::mutex mu;
  static std::map<std::string, std::unique_ptr<MelFilterbank>> cache;
  std::lock_guard lock(mu);
  auto key = cfg.fingerprint();
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(std::move(key), build_filterbank(cfg)).first;
  return *it->second;
}

MelSpectrogram mel_from_power(const MagnitudeSpec& power, const MelConfig& cfg) {
  const auto& fb = mel_filterbank(cfg);
  if (power.bins != fb.bins) throw DomainError("power spectrum bin count does not match mel config");
  MelSpectrogram out(power.frames, fb.n_mels, cfg);
  for (std::size_t f = 0; f < power.frames; ++f) {
    for (std::size_t m = 0; m < fb.n_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < fb.bins; ++k) e += fb.w(m, k) * power.at(f, k);
      out.at(f, m) = static_cast<float>(std::log(std::max(e, cfg.log_floor)));
    }
  }
  return out;
}

MelSpectrogram mel_spectrogram(const Waveform& w, const MelConfig& cfg) {
  cfg.validate();
  if (!w.empty() && w.sample_rate() != cfg.sample_rate) {
    throw DomainError("waveform sample rate " + std::to_string(w.sample_rate()) +
                      " does not match mel config " + std::to_string(cfg.sample_rate));
  }
  auto power = magnitude(stft(w, cfg.spectral));
  for (double& v : power.data) v *= v;
  return mel_from_power(power, cfg);
}

namespace {

struct SparseColumn {
  std::size_t m[2] = {0, 0};
  double w[2] = {0.0, 0.0};
  int n = 0;
};

// Triangles overlap pairwise, so each bin touches at most two filters.
std::vector<SparseColumn> sparse_columns(const MelFilterbank& fb) {
  std::vector<SparseColumn> cols(fb.bins);
  for (std::size_t k = 0; k < fb.bins; ++k) {
    for (std::size_t m = 0; m < fb.n_mels; ++m) {
      const double w = fb.w(m, k);
      if (w <= 0.0) continue;
      if (cols[k].n == 2) throw DomainError("mel filterbank has more than two filters per bin");
      cols[k].m[cols[k].n] = m;
      cols[k].w[cols[k].n] = w;
      ++cols[k].n;
    }
  }
  return cols;
}

constexpr int kNnlsIters = 200;

}  // namespace

MagnitudeSpec mel_to_linear(const MelSpectrogram& m, const MelConfig& cfg) {
  const auto& fb = mel_filterbank(cfg);
  if (m.bins != fb.n_mels) throw DomainError("mel bin count does not match mel config");
  const auto cols = sparse_columns(fb);
  MagnitudeSpec out;
  out.frames = m.frames;
  out.bins = fb.bins;
  out.config = cfg.spectral;
  out.data.assign(out.frames * out.bins, 0.0);

  std::vector<double> band_weight(fb.n_mels, 0.0);
  for (const auto& c : cols) {
    for (int i = 0; i < c.n; ++i) band_weight[c.m[i]] += c.w[i] * c.w[i];
  }
  std::vector<double> energy(fb.n_mels), wte(fb.bins), p(fb.bins), approx(fb.n_mels);
  for (std::size_t f = 0; f < m.frames; ++f) {
    for (std::size_t j = 0; j < fb.n_mels; ++j) energy[j] = std::exp(static_cast<double>(m.at(f, j)));
    // Lee-Seung multiplicative updates for min ||W p - e||^2, p >= 0, started
    // from each band's energy spread over its own triangle.
    for (std::size_t k = 0; k < fb.bins; ++k) {
      const auto& c = cols[k];
      wte[k] = 0.0;
      p[k] = 0.0;
      for (int i = 0; i < c.n; ++i) {
        wte[k] += c.w[i] * energy[c.m[i]];
        p[k] += c.w[i] * energy[c.m[i]] / band_weight[c.m[i]];
      }
    }
    for (int it = 0; it < kNnlsIters; ++it) {
      std::fill(approx.begin(), approx.end(), 0.0);
      for (std::size_t k = 0; k < fb.bins; ++k) {
        for (int i = 0; i < cols[k].n; ++i) approx[cols[k].m[i]] += cols[k].w[i] * p[k];
      }
      for (std::size_t k = 0; k < fb.bins; ++k) {
        const auto& c = cols[k];
        if (c.n == 0 || p[k] == 0.0) continue;
        double den = 0.0;
        for (int i = 0; i < c.n; ++i) den += c.w[i] * approx[c.m[i]];
        p[k] *= wte[k] / std::max(den, 1e-300);
      }
    }
    for (std::size_t k = 0; k < fb.bins; ++k) out.at(f, k) = std::sqrt(p[k]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Griffin-Lim

double spectral_convergence(const Waveform& x, const MagnitudeSpec& target) {
  const auto mag = magnitude(stft(x, target.config));
  double num = 0.0;
  double den = 0.0;
  const std::size_t frames = std::min(mag.frames, target.frames);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t k = 0; k < target.bins; ++k) {
      const double d = mag.at(f, k) - target.at(f, k);
      num += d * d;
      den += target.at(f, k) * target.at(f, k);
    }
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

Waveform griffin_lim(const MagnitudeSpec& mag, const SpectralConfig& cfg, int sample_rate,
                     const GriffinLimOptions& opts) {
  if (opts.iters < 1) throw DomainError("griffin-lim needs at least one iteration");
  const std::size_t length =
      opts.length == static_cast<std::size_t>(-1) ? (mag.frames > 0 ? (mag.frames - 1) * cfg.hop : 0) : opts.length;

  ComplexSpec spec;
  spec.frames = mag.frames;
  spec.bins = mag.bins;
  spec.config = cfg;
  spec.data.resize(mag.data.size());
  // Zero-phase initialisation keeps the vocoder deterministic.
  for (std::size_t i = 0; i < mag.data.size(); ++i) spec.data[i] = {mag.data[i], 0.0};

  std::vector<std::complex<double>> previous(spec.data.size());
  Waveform x = istft(spec, cfg, sample_rate, length);
  for (int it = 0; it < opts.iters; ++it) {
    auto rebuilt = stft(x, cfg);
    for (std::size_t i = 0; i < spec.data.size(); ++i) {
      std::complex<double> c = rebuilt.data[i];
      if (opts.momentum > 0.0) {
        const auto raw = c;
        c = raw + opts.momentum * (raw - previous[i]);
        previous[i] = raw;
      }
      const double a = std::abs(c);
      spec.data[i] = a > 1e-12 ? mag.data[i] * (c / a) : std::complex<double>(mag.data[i], 0.0);
    }
    x = istft(spec, cfg, sample_rate, length);
    if (opts.convergence != nullptr) opts.convergence->push_back(spectral_convergence(x, mag));
  }
  return x;
}

Waveform vocode(const MelSpectrogram& m, int iters) {
  const auto mag = mel_to_linear(m, m.config);
  GriffinLimOptions opts;
  opts.iters = iters;
  opts.momentum = 0.99;
  return griffin_lim(mag, m.config.spectral, m.config.sample_rate, opts);
}

// ---------------------------------------------------------------------------

MelSpectrogram resample_frames(const MelSpectrogram& m, std::size_t out_frames) {
  if (m.frames == 0) throw DomainError("cannot resample an empty mel");
  MelSpectrogram out(out_frames, m.bins, m.config, m.source_ratio);
  for (std::size_t j = 0; j < out_frames; ++j) {
    const double pos = out_frames > 1 && m.frames > 1
                           ? static_cast<double>(j) * static_cast<double>(m.frames - 1) / static_cast<double>(out_frames - 1)
                           : 0.0;
    const auto i0 = std::min(static_cast<std::size_t>(pos), m.frames - 1);
    const auto i1 = std::min(i0 + 1, m.frames - 1);
    const double t = pos - static_cast<double>(i0);
    for (std::size_t b = 0; b < m.bins; ++b) {
      out.at(j, b) = static_cast<float>((1.0 - t) * m.at(i0, b) + t * m.at(i1, b));
    }
  }
  return out;
}

void write_sqzm(const MelSpectrogram& m, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  const std::uint32_t header[3] = {1u, static_cast<std::uint32_t>(m.frames), static_cast<std::uint32_t>(m.bins)};
  f.write("SQZM", 4);
  f.write(reinterpret_cast<const char*>(header), sizeof header);
  f.write(reinterpret_cast<const char*>(m.data.data()), static_cast<std::streamsize>(m.data.size() * sizeof(float)));
  if (!f) throw IoError("write failed for " + path.string());
}

MelSpectrogram read_sqzm(const std::filesystem::path& path, const MelConfig& cfg) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  char magic[4];
  std::uint32_t header[3];
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(header), sizeof header);
  if (!f || std::memcmp(magic, "SQZM", 4) != 0) throw FormatError(path.string() + ": not an SQZM file");
  if (header[0] != 1u) throw FormatError(path.string() + ": unsupported SQZM version");
  MelSpectrogram m(header[1], header[2], cfg);
  f.read(reinterpret_cast<char*>(m.data.data()), static_cast<std::streamsize>(m.data.size() * sizeof(float)));
  if (!f) throw FormatError(path.string() + ": truncated SQZM payload");
  return m;
}

}  // namespace sqz
