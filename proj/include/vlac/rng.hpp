// Deterministic random number generation (xoshiro256++ with splitmix64 seeding).
// All randomness in the project flows through this so that runs are reproducible
// across platforms and standard libraries, and so generator state can be
// checkpointed as four 64-bit words.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace vlac {

class Rng {
 public:
  explicit Rng(uint64_t seed) {
    // splitmix64 expansion of the seed into the full state
    uint64_t x = seed;
    for (auto& word : state_) {
      x += 0x9e3779b97f4a7c15ull;
      uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
      word = z ^ (z >> 31);
    }
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform on the open interval (0,1).
  double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  // Standard normal via Box-Muller; two uniforms per draw, no cached spare,
  // so the state advances by a fixed amount per call.
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return next_u64() % n; }

  std::array<uint64_t, 4> state() const { return state_; }
  void set_state(const std::array<uint64_t, 4>& s) { state_ = s; }

  // Independent stream derived from this seed and a stream id.
  Rng fork(uint64_t stream) const {
    Rng r(state_[0] ^ (0x9e3779b97f4a7c15ull * (stream + 1)));
    return r;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::array<uint64_t, 4> state_{};
};

}  // namespace vlac
