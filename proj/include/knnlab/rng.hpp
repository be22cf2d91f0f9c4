#ifndef KNNLAB_RNG_HPP_
#define KNNLAB_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <numbers>

namespace knnlab {

// Counter-based generator: draw i of stream s under seed q is a pure function
// of (q, s, i). No state means identical output for any worker count or
// evaluation order, which every seeded operation in this project relies on.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

class Rng {
  public:
    Rng(uint64_t seed, uint64_t stream = 0)
        : key_(splitmix64(seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1)))) {}

    uint64_t bits(uint64_t i) const { return splitmix64(key_ + i); }

    // Uniform in [0, 1), 53 bits.
    double uniform(uint64_t i) const { return double(bits(i) >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; consumes counters 2i and 2i+1.
    double normal(uint64_t i) const {
        double u1 = 1.0 - uniform(2 * i);  // (0, 1], keeps log finite
        double u2 = uniform(2 * i + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Uniform integer in [0, n), n >= 1. Modulo bias is irrelevant at the
    // sample counts used here.
    uint64_t below(uint64_t i, uint64_t n) const { return bits(i) % n; }

  private:
    uint64_t key_;
};

}  // namespace knnlab

#endif  // KNNLAB_RNG_HPP_
