#pragma once

#include <cmath>
#include <cstdint>

namespace dgt {

/// splitmix64, the PRNG behind every randomized stage. Fixed here (rather
/// than std::mt19937 or the libc generators) so that seeds, golden files and
/// sidecar replay data stay portable across implementations.
///
/// Stream definition, for independent re-implementation:
///   state += 0x9E3779B97F4A7C15
///   z = state
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   output = z ^ (z >> 31)
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0,1): top 53 bits of next().
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform double in (0,1], safe as a log() argument.
  double uniform_pos() {
    return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
  }

  /// Bounded draw by modulo reduction: next() % bound. The modulo bias is
  /// ~2^-54 at the grid sizes used here and is part of the documented stream.
  std::uint64_t bounded(std::uint64_t bound) { return next() % bound; }

 private:
  std::uint64_t state_;
};

/// Standard-normal stream: Box-Muller over splitmix64 uniforms.
///   u1 in (0,1], u2 in [0,1)
///   r = sqrt(-2 ln u1)
///   z0 = r cos(2 pi u2), z1 = r sin(2 pi u2)   (z1 is returned second)
class GaussRng {
 public:
  explicit GaussRng(std::uint64_t seed) : rng_(seed) {}

  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = rng_.uniform_pos();
    const double u2 = rng_.uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  SplitMix64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Derives an independent substream seed from (base, tag) or (base, tag, index).
/// Two mixing rounds keep related bases/tags from producing related streams.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t tag) {
  SplitMix64 g(base);
  SplitMix64 h(g.next() ^ tag);
  return h.next();
}

inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t tag,
                              std::uint64_t index) {
  return mix_seed(mix_seed(base, tag), index);
}

/// Substream tags. Values are frozen; changing them would silently change
/// every derived artifact.
namespace seed_tag {
constexpr std::uint64_t kInitNoise = 1;     // sampler x_T draw
constexpr std::uint64_t kStepNoise = 2;     // ancestral per-step noise
constexpr std::uint64_t kLossDraw = 3;      // (t, eps) draws inside losses
constexpr std::uint64_t kShuffle = 4;       // epoch shuffles
constexpr std::uint64_t kDropout = 5;       // condition dropout
constexpr std::uint64_t kParamInit = 6;     // model initialization
constexpr std::uint64_t kPermutation = 7;   // scrambled-grid permutations
constexpr std::uint64_t kSynthesis = 8;     // synthetic dataset drawing
constexpr std::uint64_t kPerturb = 9;       // eps0 in noise perturbation
constexpr std::uint64_t kStage = 10;        // continual stage derivation
constexpr std::uint64_t kHoldout = 11;      // classifier train/held-out split
}  // namespace seed_tag

}  // namespace dgt
