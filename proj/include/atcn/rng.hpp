#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace atcn {

// splitmix64, used to mix seeds for derived substreams.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Deterministic random stream. All sampling transforms are hand-rolled on top
// of mt19937_64 so results are identical across platforms and standard
// libraries (std::*_distribution makes no such guarantee).
class RngStream {
public:
    explicit RngStream(uint64_t seed) : engine_(seed) {}

    // Substream for (seed, a, b, c), e.g. (run seed, epoch, step, purpose).
    static RngStream derive(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
        uint64_t s = mix64(seed);
        s = mix64(s ^ mix64(a));
        s = mix64(s ^ mix64(b));
        s = mix64(s ^ mix64(c));
        return RngStream(s);
    }

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Marsaglia polar Box-Muller with a cached spare.
    double gauss(double mu = 0.0, double sigma = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mu + sigma * spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform01() - 1.0;
            v = 2.0 * uniform01() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return mu + sigma * u * f;
    }

    bool bernoulli(double p) { return uniform01() < p; }

    // Uniform integer in [0, n) without modulo bias.
    uint64_t index(uint64_t n) {
        if (n == 0) return 0;
        const uint64_t threshold = (0ull - n) % n;
        for (;;) {
            const uint64_t r = engine_();
            if (r >= threshold) return r % n;
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace atcn
