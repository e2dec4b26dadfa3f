#include "sqz/diffusion.hpp"

#include <cmath>
#include <string>

namespace sqz {

NoiseSchedule make_schedule(int steps, double delta_max, double delta_min) {
  if (steps < 2) throw DomainError("schedule needs at least 2 steps, got " + std::to_string(steps));
  if (!(delta_min > 0.0) || !(delta_max > delta_min)) {
    throw DomainError("schedule needs delta_max > delta_min > 0");
  }
  NoiseSchedule s;
  s.levels.reserve(static_cast<std::size_t>(steps) + 1);
  const double ratio = delta_min / delta_max;
  for (int i = 0; i < steps; ++i) {
    s.levels.push_back(i == 0 ? delta_max : delta_max * std::pow(ratio, static_cast<double>(i) / (steps - 1)));
  }
  s.levels.push_back(0.0);
  return s;
}

Tensor<float> sample(const Denoiser& denoiser, std::size_t rows, std::size_t cols, const NoiseSchedule& schedule,
                     Rng& rng, const Consistency* consistency) {
  if (schedule.steps() < 1 || schedule.levels.back() != 0.0) throw DomainError("sample: invalid schedule");
  const std::size_t n = rows * cols;
  if (consistency != nullptr && (consistency->known.size() != n || consistency->values.size() != n)) {
    throw ShapeError("sample: consistency mask does not match the sample shape");
  }
  std::vector<double> x(n);
  const double d0 = schedule.levels[0];
  for (auto& v : x) v = d0 * rng.normal();
  Tensor<float> xf = Tensor<float>::matrix(rows, cols);

  auto impose = [&](double level) {
    if (consistency == nullptr) return;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = rng.normal();
      if (consistency->known[i] != 0) x[i] = consistency->values[i] + level * e;
    }
  };
  impose(d0);

  for (std::size_t step = 0; step < schedule.steps(); ++step) {
    const double di = schedule.levels[step];
    const double dn = schedule.levels[step + 1];
    for (std::size_t i = 0; i < n; ++i) xf[i] = static_cast<float>(x[i]);
    const Tensor<float> d = denoiser(xf, di);
    if (d.size() != n) throw ShapeError("sample: denoiser output shape differs from its input");
    for (std::size_t i = 0; i < n; ++i) x[i] += (dn - di) * (x[i] - d[i]) / di;
    impose(dn);
  }
  for (std::size_t i = 0; i < n; ++i) xf[i] = static_cast<float>(x[i]);
  if (consistency != nullptr) {
    for (std::size_t i = 0; i < n; ++i) {
      if (consistency->known[i] != 0) xf[i] = consistency->values[i];
    }
  }
  nn::check_finite(xf, "sample");
  return xf;
}

Tensor<float> MelNorm::to_tensor(const MelSpectrogram& m) const {
  Tensor<float> t = Tensor<float>::matrix(m.frames, m.bins);
  for (std::size_t i = 0; i < m.data.size(); ++i) t[i] = static_cast<float>((m.data[i] - mean) / std);
  return t;
}

MelSpectrogram MelNorm::to_mel(const Tensor<float>& t, const MelConfig& cfg, double source_ratio) const {
  MelSpectrogram m(t.rows(), t.cols(), cfg, source_ratio);
  for (std::size_t i = 0; i < t.size(); ++i) m.data[i] = static_cast<float>(t[i] * std + mean);
  return m;
}

MelNorm MelNorm::fit(const std::vector<MelSpectrogram>& mels) {
  double sum = 0.0;
  double sq = 0.0;
  std::size_t count = 0;
  for (const auto& m : mels) {
    for (float v : m.data) {
      sum += v;
      sq += static_cast<double>(v) * v;
    }
    count += m.data.size();
  }
  if (count == 0) throw DomainError("cannot fit mel statistics on empty input");
  MelNorm n;
  n.mean = sum / static_cast<double>(count);
  n.std = std::sqrt(std::max(sq / static_cast<double>(count) - n.mean * n.mean, 1e-8));
  return n;
}

}  // namespace sqz
