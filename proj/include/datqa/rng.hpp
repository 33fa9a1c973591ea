#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string_view>
#include <vector>

namespace datqa {

// SplitMix64 step. Used to expand seeds and to derive sub-streams.
inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline uint64_t fnv1a64_bytes(const void* p, size_t n) {
    uint64_t h = 1469598103934665603ULL;
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ULL;
    }
    return h;
}

// Fold one 64-bit value into an FNV-1a hash, little-endian byte order.
inline uint64_t fnv1a64_mix(uint64_t h, uint64_t x) {
    for (int i = 0; i < 8; ++i) {
        h ^= (x >> (8 * i)) & 0xffu;
        h *= 1099511628211ULL;
    }
    return h;
}

// Derived sub-stream seeds: fold an FNV-1a hash of a label (plus optional
// integer salts) into the base seed through SplitMix64.
inline uint64_t derive(uint64_t seed, std::string_view stream) {
    uint64_t s = seed;
    return splitmix64(s) ^ fnv1a64(stream);
}

inline uint64_t derive(uint64_t seed, std::string_view stream, uint64_t salt0, uint64_t salt1 = 0) {
    uint64_t b = derive(seed, stream);
    b += 0x9e3779b97f4a7c15ULL * (salt0 + 1);
    uint64_t c = splitmix64(b);
    c += 0x9e3779b97f4a7c15ULL * (salt1 + 1);
    return splitmix64(c);
}

// xoshiro256** seeded through SplitMix64.
//
// Every consumer of randomness takes its own derived stream rather than
// sharing one generator, so adding draws in one place never shifts another:
//   - "init/<param name>"      parameter initialization, one stream per tensor
//   - "dropout"                mixed with (epoch, step) per training batch
//   - "shuffle"                mixed with the epoch number
//   - "gen/<part>"             synthetic corpus generation
//   - "kmeans", "probe", ...   one-off algorithm streams
// Streams are derived by folding an FNV-1a hash of the label (plus optional
// integer salts) into the base seed via SplitMix64.
class Rng {
  public:
    explicit Rng(uint64_t seed) {
        uint64_t s = seed;
        for (auto& w : state_) w = splitmix64(s);
    }

    uint64_t next_u64() {
        uint64_t result = rotl(state_[1] * 5, 7) * 9;
        uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0,1), 53-bit resolution.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Standard normal via Box-Muller. Two draws per call, no caching.
    double normal() {
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0,1]
        double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    // Unbiased integer in [0, n) by rejection.
    uint64_t below(uint64_t n) {
        uint64_t threshold = (0 - n) % n;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Fisher-Yates.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    uint64_t state_[4];
};

}  // namespace datqa
