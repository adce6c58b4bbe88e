#pragma once

#include <cstdint>
#include <cmath>
#include <vector>

namespace podnn {

// Self-contained RNG so that streams are bit-identical across compilers and
// standard libraries. Core generator is splitmix64-seeded xoshiro256++.
class Rng {
public:
    explicit Rng(uint64_t seed) { reseed(seed); }

    // Derive an independent stream from a base seed and a stream id.
    static Rng stream(uint64_t seed, uint64_t stream_id) {
        return Rng(mix(seed, stream_id));
    }

    void reseed(uint64_t seed) {
        uint64_t x = seed;
        for (auto& s : s_) {
            s = splitmixent(x);
        }
        has_spare_ = false;
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

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), unbiased via rejection.
    uint64_t below(uint64_t n) {
        const uint64_t threshold = (0 - n) % n;
        for (;;) {
            const uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    int below_int(int n) { return static_cast<int>(below(static_cast<uint64_t>(n))); }

    // Standard normal via Box-Muller with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    static uint64_t mix(uint64_t a, uint64_t b) {
        uint64_t x = a ^ (0x9e3779b97f4a7c15ULL + b);
        return splitmixent(x);
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    static uint64_t splitmixent(uint64_t& x) {
        x += 0x9e3779b97f4a7c15ULL;
        uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    uint64_t s_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace podnn
