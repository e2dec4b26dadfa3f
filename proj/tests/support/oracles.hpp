#pragma once

// Independent reference computations used as test oracles. Nothing here calls
// into the library's transforms.

#include <complex>
#include <vector>

#include "sqz/audio.hpp"

namespace oracle {

/// O(n^2) DFT of a real sequence, bins 0..n/2.
std::vector<std::complex<double>> dft(const std::vector<double>& x);

/// Centered, reflect-padded, periodic-Hann frame starting at f*hop - n/2.
std::vector<double> windowed_frame(const std::vector<float>& s, std::size_t f, int n, int hop);

/// Goertzel power scan; returns the frequency with the largest response,
/// refined to 0.25 Hz.
double dominant_frequency(const sqz::Waveform& w, double lo_hz = 20.0, double hi_hz = -1.0);

/// HTK mel filterbank, peak-one triangles, built from scratch. n_mels x bins.
std::vector<std::vector<double>> htk_filterbank(int sample_rate, int fft, int n_mels);

/// Brute-force log-mel (natural log, floor 1e-5) via direct DFT.
std::vector<std::vector<double>> log_mel(const sqz::Waveform& w, int fft, int hop, int n_mels);

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b);

}  // namespace oracle
