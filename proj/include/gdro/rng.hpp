#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>

namespace gdro {

// SplitMix64 generator. Chosen over std::mt19937 so that streams are cheap to
// key (seed + salts) and sequences are identical across platforms, which the
// trace determinism contract relies on.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  // Derives an independent stream from (seed, salts). Keying is by hashing,
  // so the result does not depend on construction order.
  static Rng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                    std::uint64_t c = 0) {
    std::uint64_t s = mix(seed ^ 0x6a09e667f3bcc909ULL);
    s = mix(s ^ mix(a));
    s = mix(s ^ mix(b ^ 0xbb67ae8584caa73bULL));
    s = mix(s ^ mix(c ^ 0x3c6ef372fe94f82bULL));
    return Rng(s);
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform index in [0, n). Lemire reduction, no modulo bias worth caring
  // about at these ranges and fully deterministic.
  std::size_t next_index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::next_index: n must be > 0");
    return static_cast<std::size_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Samples an index from an (approximately normalized) probability vector by
  // CDF inversion. Falls back to the last index on accumulated rounding.
  std::size_t sample_categorical(std::span<const double> probs) {
    if (probs.empty())
      throw std::invalid_argument("Rng::sample_categorical: empty");
    const double u = next_double();
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return i;
    }
    return probs.size() - 1;
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace gdro
