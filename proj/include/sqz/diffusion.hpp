#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "sqz/nn/tensor.hpp"
#include "sqz/rng.hpp"
#include "sqz/spectral.hpp"

namespace sqz {

using nn::Tensor;

/// Noise levels delta_0 > delta_1 > ... > delta_N = 0.
struct NoiseSchedule {
  std::vector<double> levels;

  std::size_t steps() const { return levels.empty() ? 0 : levels.size() - 1; }
  double max_level() const { return levels.front(); }
};

/// Geometric interior delta_i = dmax (dmin/dmax)^(i/(N-1)), i < N, then 0.
NoiseSchedule make_schedule(int steps, double delta_max, double delta_min);

/// Returns y + delta * eps with eps standard normal, drawn in element order.
template <typename T>
Tensor<T> add_noise(const Tensor<T>& y, double delta, Rng& rng) {
  if (delta < 0.0) throw DomainError("noise level must be non-negative");
  Tensor<T> out = y;
  if (delta == 0.0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(out[i] + delta * rng.normal());
  return out;
}

/// D(x; delta): an x0 estimate for noisy input x at level delta. Any
/// conditioning is captured by the callable.
using Denoiser = std::function<Tensor<float>(const Tensor<float>& x, double delta)>;

/// Known coordinates for hard consistency: where known[i] != 0 the sampler
/// overwrites x[i] with values[i] noised to the next level after every step.
struct Consistency {
  std::vector<std::uint8_t> known;
  Tensor<float> values;
};

/// Euler integration of the probability-flow ODE from delta_0 down to 0:
/// d = (x - D(x, delta_i)) / delta_i, x += (delta_{i+1} - delta_i) d.
/// The state is carried in double precision.
Tensor<float> sample(const Denoiser& denoiser, std::size_t rows, std::size_t cols, const NoiseSchedule& schedule,
                     Rng& rng, const Consistency* consistency = nullptr);

/// A denoiser that can be trained: forward retains what backward needs;
/// backward receives dLoss/dOutput and accumulates parameter gradients.
template <typename T>
struct TrainableDenoiser {
  std::function<Tensor<T>(const Tensor<T>& x, double delta)> forward;
  std::function<void(const Tensor<T>& grad)> backward;
};

struct RefineLossResult {
  double loss = 0.0;
  std::size_t level_index = 0;
};

/// x0-prediction loss: draws t uniformly from the interior indices
/// {0, ..., N-1}, noises m0 to delta_t and returns the mean squared error of
/// the denoiser output against m0. With `support`, only elements whose flag is
/// set contribute. Gradients are pushed through `denoiser.backward`.
template <typename T>
RefineLossResult refine_loss(const TrainableDenoiser<T>& denoiser, const Tensor<T>& m0, const NoiseSchedule& schedule,
                             Rng& rng, const std::vector<std::uint8_t>* support = nullptr) {
  if (schedule.steps() < 1) throw DomainError("refine_loss needs a schedule with at least one step");
  if (support != nullptr && support->size() != m0.size()) throw ShapeError("refine_loss: support mask size mismatch");
  RefineLossResult r;
  r.level_index = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(schedule.steps()) - 1));
  const double delta = schedule.levels[r.level_index];
  const Tensor<T> noisy = add_noise(m0, delta, rng);
  const Tensor<T> out = denoiser.forward(noisy, delta);
  if (!out.same_shape(m0)) throw ShapeError("refine_loss: denoiser output shape differs from its target");
  std::size_t count = 0;
  for (std::size_t i = 0; i < m0.size(); ++i) count += support == nullptr || (*support)[i] != 0 ? 1 : 0;
  Tensor<T> grad(m0.shape());
  if (count == 0) {
    denoiser.backward(grad);
    return r;
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < m0.size(); ++i) {
    if (support != nullptr && (*support)[i] == 0) continue;
    const double diff = static_cast<double>(out[i]) - static_cast<double>(m0[i]);
    sum += diff * diff;
    grad[i] = static_cast<T>(2.0 * diff / static_cast<double>(count));
  }
  r.loss = sum / static_cast<double>(count);
  denoiser.backward(grad);
  return r;
}

/// Scalar standardisation of log-mel values, (v - mean) / std. Diffusion
/// levels are expressed in these units.
struct MelNorm {
  double mean = 0.0;
  double std = 1.0;

  Tensor<float> to_tensor(const MelSpectrogram& m) const;
  MelSpectrogram to_mel(const Tensor<float>& t, const MelConfig& cfg, double source_ratio) const;
  /// Statistics over every cell of the given mels.
  static MelNorm fit(const std::vector<MelSpectrogram>& mels);
};

}  // namespace sqz
