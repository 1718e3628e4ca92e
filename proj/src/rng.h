#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace gridvla {

// splitmix64; every stochastic choice in the project routes through this so
// results are bit-stable across platforms and standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return (double) (next() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n)
    uint64_t below(uint64_t n) { return n == 0 ? 0 : next() % n; }

    bool coin() { return (next() & 1) != 0; }

    // Box-Muller
    double normal(double mean = 0.0, double stddev = 1.0) {
        if (have_spare_) {
            have_spare_ = false;
            return mean + stddev * spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r  = std::sqrt(-2.0 * std::log(u1));
        double a  = 6.283185307179586476925286766559 * u2;
        spare_      = r * std::sin(a);
        have_spare_ = true;
        return mean + stddev * r * std::cos(a);
    }

    template <typename T>
    void shuffle(std::vector<T> & v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = (size_t) below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
    bool     have_spare_ = false;
    double   spare_      = 0.0;
};

inline uint64_t fnv1a64(const void * data, size_t len) {
    const auto * p = (const unsigned char *) data;
    uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string & s) {
    return fnv1a64(s.data(), s.size());
}

// Deterministic sub-seed derivation: mixes a parent seed with a domain tag.
inline uint64_t derive_seed(uint64_t seed, const std::string & tag) {
    uint64_t h = fnv1a64(tag) ^ (seed * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL);
    return Rng(h).next();
}

inline uint64_t derive_seed(uint64_t seed, const std::string & tag, uint64_t index) {
    return derive_seed(seed ^ (index * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL), tag);
}

} // namespace gridvla
