#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <utility>

namespace salcl {

// Deterministic PRNG (xoshiro256++) with explicitly derived named substreams.
// All randomness in the toolkit flows through this class so that runs are
// bit-reproducible for a fixed master seed, and so that toggling one feature
// cannot shift the stream consumed by another.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed) {
        // splitmix64 expansion of the seed into xoshiro state
        uint64_t x = seed;
        for (int i = 0; i < 4; ++i) s_[i] = splitmix64(x);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform double in [0, 1), 53 bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be > 0.
    int64_t uniform_int(int64_t n) {
        // 128-bit multiply; bias is < n / 2^64 which is irrelevant here.
        return static_cast<int64_t>(
            (static_cast<__uint128_t>(next_u64()) * static_cast<__uint128_t>(n)) >> 64);
    }

    // Standard normal via Box-Muller; the second draw of each pair is cached.
    double gaussian() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = 1.0 - uniform(); // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    // Independent stream derived from this stream's seed and a label.
    // Derivation depends only on (seed, name), never on draw position.
    Rng substream(std::string_view name) const {
        uint64_t h = 0xcbf29ce484222325ull; // FNV-1a
        for (char c : name) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ull;
        }
        uint64_t x = seed_ ^ h;
        return Rng(splitmix64(x));
    }

    Rng substream(std::string_view name, int64_t index) const {
        Rng r = substream(name);
        uint64_t x = r.seed_ ^ (0x9e3779b97f4a7c15ull * static_cast<uint64_t>(index + 1));
        return Rng(splitmix64(x));
    }

    // Fisher-Yates.
    template <typename Vec>
    void shuffle(Vec& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
            int64_t j = uniform_int(i + 1);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

    uint64_t seed() const { return seed_; }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    static uint64_t splitmix64(uint64_t& x) {
        uint64_t z = (x += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t seed_;
    uint64_t s_[4];
    double cached_ = 0.0;
    bool has_cached_ = false;
};

} // namespace salcl
