#pragma once
// Counter-based random streams: each (seed, stream, counter) triple opens an
// independent, reproducible generator, so Monte Carlo histories can be run in
// any order or in parallel and still produce identical tallies.

#include <cmath>
#include <cstdint>

namespace milne {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

class Rng {
  public:
    Rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter)
        : s_(splitmix64(splitmix64(seed ^ 0x5851f42d4c957f2dULL) ^
                        splitmix64(stream * 0xda942042e4dd58b5ULL + counter))) {}

    std::uint64_t next_u64() {
        s_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = s_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform on (0,1]; never returns exactly 0, safe under log().
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    double exponential() { return -std::log(uniform()); }

  private:
    std::uint64_t s_;
};

}  // namespace milne
