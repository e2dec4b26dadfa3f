#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace sqz {

namespace detail {

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

/// Derives an independent child seed for a named purpose. All randomness in a
/// run flows from one root seed through this function.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) {
  return detail::mix64(seed ^ detail::mix64(detail::fnv1a(purpose)));
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return detail::mix64(seed ^ detail::mix64(index + 0x632BE59BD9B4E019ULL));
}

/// Counter-based generator: draw i is a pure function of (key, i), so a stream
/// can be replayed or skipped without touching hidden state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : key_(detail::mix64(seed + 0x9E3779B97F4A7C15ULL)) {}

  std::uint64_t next_u64() {
    ++counter_;
    return detail::mix64(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] (inclusive).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  /// Standard normal via Box-Muller; consumes two draws.
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace sqz
