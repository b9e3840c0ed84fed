#pragma once

#include <cstdint>
#include <random>

namespace corners {

// Explicitly seeded generator with a split() operation deriving statistically
// independent child streams.  Streams are mt19937_64 seeded through the
// splitmix64 finalizer, the usual recipe for turning one 64-bit seed into
// well-separated states.  No global state anywhere.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : seed_(seed), gen_(splitmix64(seed)) {}

    std::uint64_t next_u64() { return gen_(); }

    // uniform on [0,1) with 53 random bits
    double next_double() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // uniform on {0, 1, ..., n-1}; modulo bias is < n/2^64, irrelevant at the
    // n <= a few hundred this codebase uses
    std::uint64_t next_below(std::uint64_t n) { return gen_() % n; }

    Rng split() { return Rng(splitmix64(seed_ ^ splitmix64(0x9e3779b97f4a7c15ull + (++split_count_)))); }

    static std::uint64_t splitmix64(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

  private:
    std::uint64_t seed_;
    std::uint64_t split_count_ = 0;
    std::mt19937_64 gen_;
};

}  // namespace corners
