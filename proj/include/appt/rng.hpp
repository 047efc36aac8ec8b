#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace appt {

// Seedable PRNG with distributions implemented in-house so that streams are
// bit-stable across standard library implementations (std::normal_distribution
// et al. are implementation-defined). The engine is std::mt19937_64, whose
// output sequence is fixed by the standard.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi], inclusive, by rejection.
    int uniform_int(int lo, int hi) {
        uint64_t range = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
        uint64_t limit = UINT64_MAX - UINT64_MAX % range;
        uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return lo + static_cast<int>(x % range);
    }

    // Box-Muller without caching: one normal per call, two uniforms consumed.
    double normal(double mean, double stddev) {
        double u1 = 1.0 - uniform(); // (0, 1]
        double u2 = uniform();
        double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
        return mean + stddev * z;
    }

    // Normal re-drawn until within +/- n_sigma standard deviations.
    double truncated_normal(double mean, double stddev, double n_sigma) {
        for (;;) {
            double z = normal(0.0, 1.0);
            if (std::fabs(z) <= n_sigma) return mean + stddev * z;
        }
    }

    // Fisher-Yates using uniform_int, independent of std::shuffle's dealing.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(0, static_cast<int>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derive a sub-stream seed from a base seed and a purpose tag, so that
    // independent consumers (fps, shuffle, init, ...) never share a stream.
    static uint64_t derive(uint64_t base, std::string_view tag, uint64_t index = 0) {
        uint64_t h = 1469598103934665603ull; // FNV-1a 64
        for (char c : tag) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ull;
        }
        h ^= base + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
        h ^= index * 0xbf58476d1ce4e5b9ull;
        // splitmix64 finalizer
        h ^= h >> 30;
        h *= 0xbf58476d1ce4e5b9ull;
        h ^= h >> 27;
        h *= 0x94d049bb133111ebull;
        h ^= h >> 31;
        return h;
    }

private:
    std::mt19937_64 engine_;
};

} // namespace appt
