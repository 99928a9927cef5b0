// Shared error types, deterministic RNG, and small utilities.
#pragma once

#include <cstdint>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace tonemeter {

// Bad inputs: malformed manifests, out-of-range parameters, shape mismatches.
// The CLI maps this to exit code 2.
class validation_error : public std::runtime_error {
public:
    explicit validation_error(const std::string& what) : std::runtime_error(what) {}
};

// A statistic is undefined on the given data (e.g. zero between-subject
// variance for ICC). The CLI maps this to exit code 3.
class degenerate_statistics_error : public std::runtime_error {
public:
    explicit degenerate_statistics_error(const std::string& what) : std::runtime_error(what) {}
};

inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Derives an independent stream seed from (seed, tag [, tag2]). Used to give
// every sample, fold, and bootstrap resample its own RNG so that work can be
// reordered or parallelized without changing results.
inline uint64_t mix_seed(uint64_t seed, uint64_t tag, uint64_t tag2 = 0) {
    uint64_t s = seed ^ (0x9e3779b97f4a7c15ull * (tag + 1));
    splitmix64(s);
    s ^= 0xbf58476d1ce4e5b9ull * (tag2 + 1);
    splitmix64(s);
    return s;
}

// Deterministic RNG owned by this library. All stochastic behavior (init,
// shuffles, sampling, bootstrap) goes through this class so results are
// reproducible independent of the standard library's distributions.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {
        // burn-in so nearby seeds decorrelate
        splitmix64(state_);
        splitmix64(state_);
    }

    uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1) with 53 random bits
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // uniform integer in [0, n), n > 0 (Lemire-style rejection)
    uint64_t uniform_int(uint64_t n) {
        uint64_t x = next_u64();
        __uint128_t m = static_cast<__uint128_t>(x) * n;
        auto lo = static_cast<uint64_t>(m);
        if (lo < n) {
            uint64_t t = (0 - n) % n;
            while (lo < t) {
                x = next_u64();
                m = static_cast<__uint128_t>(x) * n;
                lo = static_cast<uint64_t>(m);
            }
        }
        return static_cast<uint64_t>(m >> 64);
    }

    // Box-Muller; caches the spare value
    double normal(double mu = 0.0, double sigma = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mu + sigma * spare_;
        }
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return mu + sigma * r * std::cos(theta);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace tonemeter
