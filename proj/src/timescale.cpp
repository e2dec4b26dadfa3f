#include "sqz/timescale.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "fft.hpp"
#include "sqz/error.hpp"

namespace sqz {

SpeedRatio::SpeedRatio(double r) : r_(r) {
  if (!(r >= 1.0 / 16.0 - 1e-12) || !(r <= 16.0 + 1e-12)) {
    throw DomainError("speed ratio must lie in [1/16, 16], got " + std::to_string(r));
  }
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double princarg(double phase) { return phase - kTwoPi * std::round(phase / kTwoPi); }

// Mirror index into [0, len) without repeating the edge sample.
std::size_t reflect(std::ptrdiff_t idx, std::ptrdiff_t len) {
  if (len == 1) return 0;
  const std::ptrdiff_t period = 2 * (len - 1);
  idx %= period;
  if (idx < 0) idx += period;
  return static_cast<std::size_t>(idx < len ? idx : period - idx);
}

Waveform phase_vocoder(const Waveform& w, double r) {
  constexpr int n = kTsmFftSize;
  constexpr int hs = kTsmSynthesisHop;
  constexpr int bins = n / 2 + 1;
  if (w.size() < static_cast<std::size_t>(n)) {
    throw DomainError("phase vocoder needs at least one 2048-sample window of input");
  }
  const auto ha = static_cast<int>(std::lround(hs * r));
  const auto len = static_cast<std::ptrdiff_t>(w.size());
  const auto out_len = static_cast<std::size_t>(std::llround(static_cast<double>(len) / r));
  const std::size_t frames = (out_len + hs - 1) / hs + 1;

  std::vector<double> window(n);
  for (int i = 0; i < n; ++i) window[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(kTwoPi * i / n);

  std::vector<double> frame(n);
  std::vector<std::complex<double>> spec(bins);
  std::vector<std::complex<double>> lag(bins);
  const auto& plans = detail::fft_plans(n);
  auto* spec_ptr = reinterpret_cast<fftw_complex*>(spec.data());
  auto* lag_ptr = reinterpret_cast<fftw_complex*>(lag.data());

  std::vector<double> synth_phase(bins, 0.0);
  std::vector<double> acc(frames * hs + n, 0.0);
  std::vector<double> norm(acc.size(), 0.0);
  const auto& s = w.samples();
  auto analyse = [&](std::ptrdiff_t start, fftw_complex* dst) {
    for (int i = 0; i < n; ++i) {
      frame[static_cast<std::size_t>(i)] = window[static_cast<std::size_t>(i)] * s[reflect(start + i, len)];
    }
    fftw_execute_dft_r2c(plans.forward, frame.data(), dst);
  };

  // The phase advance over one synthesis hop is measured directly from a
  // second analysis frame one synthesis hop earlier, so the instantaneous
  // frequency estimate stays unambiguous for any analysis hop. Only spectral
  // peaks are propagated; every other bin keeps its analysed phase offset to
  // the nearest peak (identity phase locking). Frames are always analysed
  // from a full window inside the input; the first frame's phases are moved
  // back along each peak's instantaneous frequency to the frame's nominal
  // position, which keeps edges free of reflection artefacts.
  const std::ptrdiff_t lo = std::min<std::ptrdiff_t>(hs, len - n);
  const std::ptrdiff_t hi = len - n;
  std::vector<double> mag(bins), phase(bins), advance(bins), next(bins);
  std::vector<int> peaks;
  for (std::size_t k = 0; k < frames; ++k) {
    const std::ptrdiff_t nominal = static_cast<std::ptrdiff_t>(k) * ha - n / 2;
    const std::ptrdiff_t start = std::clamp(nominal, lo, hi);
    analyse(start, spec_ptr);
    analyse(start - hs, lag_ptr);
    for (std::size_t b = 0; b < static_cast<std::size_t>(bins); ++b) {
      mag[b] = std::abs(spec[b]);
      phase[b] = std::arg(spec[b]);
      advance[b] = princarg(phase[b] - std::arg(lag[b]));
    }
    peaks.clear();
    for (int b = 0; b < bins; ++b) {
      bool peak = mag[static_cast<std::size_t>(b)] > 0.0;
      for (int d = -2; d <= 2 && peak; ++d) {
        const int j = b + d;
        if (d != 0 && j >= 0 && j < bins) peak = mag[static_cast<std::size_t>(b)] >= mag[static_cast<std::size_t>(j)];
      }
      if (peak) peaks.push_back(b);
    }
    for (int p : peaks) {
      const auto up = static_cast<std::size_t>(p);
      if (k == 0) {
        const double omega = kTwoPi * p / n;
        const double inst = omega + princarg(advance[up] - omega * hs) / hs;
        next[up] = princarg(phase[up] - inst * static_cast<double>(start - nominal));
      } else {
        next[up] = princarg(synth_phase[up] + advance[up]);
      }
    }
    std::size_t nearest = 0;
    for (int b = 0; b < bins && !peaks.empty(); ++b) {
      while (nearest + 1 < peaks.size() && std::abs(peaks[nearest + 1] - b) <= std::abs(peaks[nearest] - b)) ++nearest;
      const auto up = static_cast<std::size_t>(peaks[nearest]);
      const auto ub = static_cast<std::size_t>(b);
      if (ub != up) next[ub] = princarg(next[up] + phase[ub] - phase[up]);
    }
    if (peaks.empty()) std::fill(next.begin(), next.end(), 0.0);
    synth_phase = next;
    for (std::size_t b = 0; b < static_cast<std::size_t>(bins); ++b) spec[b] = std::polar(mag[b], synth_phase[b]);
    fftw_execute_dft_c2r(plans.inverse, spec_ptr, frame.data());
    const std::size_t base = k * hs;
    for (int i = 0; i < n; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      acc[base + ui] += window[ui] * frame[ui] / n;
      norm[base + ui] += window[ui] * window[ui];
    }
  }

  // Output sample t sits at acc[t + n/2] because frame k is centred on k*hs.
  std::vector<float> out(out_len);
  for (std::size_t t = 0; t < out_len; ++t) {
    const double d = norm[t + n / 2];
    out[t] = d > 1e-8 ? static_cast<float>(acc[t + n / 2] / d) : 0.0f;
  }
  return Waveform(std::move(out), w.sample_rate());
}

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  return std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
}

// Windowed-sinc fractional resampler reading the input at positions n*r.
Waveform naive_resample(const Waveform& w, double r) {
  constexpr double kZeroCrossings = 16.0;
  const double cutoff = std::min(1.0, 1.0 / r);
  const double half_width = kZeroCrossings / cutoff;
  const auto len = static_cast<std::ptrdiff_t>(w.size());
  const auto out_len = static_cast<std::size_t>(std::llround(static_cast<double>(len) / r));
  const auto& s = w.samples();
  std::vector<float> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    const double t = static_cast<double>(i) * r;
    const auto lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::ceil(t - half_width)));
    const auto hi = std::min<std::ptrdiff_t>(len - 1, static_cast<std::ptrdiff_t>(std::floor(t + half_width)));
    double acc = 0.0;
    for (std::ptrdiff_t m = lo; m <= hi; ++m) {
      const double u = t - static_cast<double>(m);
      const double taper = 0.5 + 0.5 * std::cos(std::numbers::pi * u / half_width);
      acc += s[static_cast<std::size_t>(m)] * cutoff * sinc(cutoff * u) * taper;
    }
    out[i] = static_cast<float>(acc);
  }
  return Waveform(std::move(out), w.sample_rate());
}

}  // namespace

Waveform tsm_compress(const Waveform& w, SpeedRatio r, TsmMode mode) {
  if (mode == TsmMode::phase_vocoder) return phase_vocoder(w, r.value());
  if (w.empty()) throw DomainError("cannot resample an empty waveform");
  return naive_resample(w, r.value());
}

Waveform tsm_expand(const Waveform& w, SpeedRatio r, TsmMode mode) { return tsm_compress(w, r.inverse(), mode); }

MelSpectrogram mel_stretch(const MelSpectrogram& m, SpeedRatio r) {
  if (m.frames == 0) throw DomainError("cannot stretch an empty mel");
  const auto out_frames =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(m.frames) * r.value())));
  if (out_frames == m.frames) {
    MelSpectrogram copy = m;
    copy.source_ratio = m.source_ratio / r.value();
    return copy;
  }
  auto out = resample_frames(m, out_frames);
  out.source_ratio = m.source_ratio / r.value();
  return out;
}

}  // namespace sqz
