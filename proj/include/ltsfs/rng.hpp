#pragma once

#include <cmath>
#include <cstdint>

namespace ltsfs {

// Deterministic RNG with a fixed cross-platform bit stream. std::mt19937 plus
// the standard distributions is implementation-defined, which would break the
// byte-identical regeneration guarantees, so both the generator and the
// gaussian transform are pinned here.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  // splitmix64
  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // uniform integer in [0, n)
  uint64_t next_below(uint64_t n) { return n ? next_u64() % n : 0; }

  // Box-Muller, one value per call (the sibling value is discarded to keep
  // the stream position independent of call parity).
  double next_gaussian() {
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 1e-300) u1 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  bool next_bernoulli(double p) { return next_double() < p; }

  // Derive an independent stream, e.g. one per scene or per layer.
  Rng fork(uint64_t stream) {
    uint64_t mixed = state_ ^ (0x9e3779b97f4a7c15ull * (stream + 0x632be59bd9b4e019ull));
    return Rng(mixed * 0xd1342543de82ef95ull + stream);
  }

 private:
  uint64_t state_;
};

}  // namespace ltsfs
