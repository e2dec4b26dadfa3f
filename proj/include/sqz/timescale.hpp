#pragma once

#include "sqz/audio.hpp"
#include "sqz/spectral.hpp"

namespace sqz {

/// Speed-up factor: r > 1 compresses, r < 1 expands. Valid range [1/16, 16].
class SpeedRatio {
 public:
  SpeedRatio(double r);  // NOLINT(google-explicit-constructor): ratios read naturally as numbers
  double value() const { return r_; }
  operator double() const { return r_; }  // NOLINT(google-explicit-constructor)
  SpeedRatio inverse() const { return SpeedRatio(1.0 / r_); }

 private:
  double r_;
};

enum class TsmMode { phase_vocoder, naive_resample };

constexpr int kTsmFftSize = 2048;
constexpr int kTsmSynthesisHop = 512;

/// Shortens the signal by r at the original sample rate. The phase vocoder
/// keeps pitch; naive resampling scales every frequency by r.
Waveform tsm_compress(const Waveform& w, SpeedRatio r, TsmMode mode = TsmMode::phase_vocoder);

/// Lengthens by r; same as tsm_compress with 1/r.
Waveform tsm_expand(const Waveform& w, SpeedRatio r, TsmMode mode = TsmMode::phase_vocoder);

/// Time-stretches a mel by r (r > 1 lengthens) to round(frames * r) frames with
/// per-bin linear interpolation.
MelSpectrogram mel_stretch(const MelSpectrogram& m, SpeedRatio r);

}  // namespace sqz
