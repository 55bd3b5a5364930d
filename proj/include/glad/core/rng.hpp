#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace glad {

// splitmix64; used to derive independent substream seeds from (seed, tags...).
inline uint64_t hash_mix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t seed_chain(uint64_t seed) { return hash_mix(seed); }
template <class... Tags>
uint64_t seed_chain(uint64_t seed, uint64_t tag, Tags... rest) {
    return seed_chain(hash_mix(seed ^ hash_mix(tag)), rest...);
}

// Deterministic RNG wrapper. Gaussian draws use Box-Muller on top of the
// uniform stream so sequences do not depend on the standard library's
// distribution implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    // uniform in [0, 1)
    double uniform() {
        return (engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [0, n)
    uint64_t randint(uint64_t n) {
        return static_cast<uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * M_PI * u2;
        spare_ = r * std::sin(t);
        have_spare_ = true;
        return r * std::cos(t);
    }

    double normal(double mean, double stdev) { return mean + stdev * normal(); }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace glad
