#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>

#include "factorcf/common.hpp"

// Reproducibility contract: every stream is a std::mt19937_64 (whose output
// sequence the standard pins down exactly) driven through hand-rolled
// distributions below. The std:: distribution adaptors are implementation
// defined and must not be used anywhere in the library.

namespace factorcf {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derives the seed of a named substream from a master seed.
inline std::uint64_t substream_seed(std::uint64_t master, std::string_view name) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the name
    for (unsigned char c : name) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::uint64_t s = master ^ h;
    std::uint64_t r = splitmix64(s);
    r ^= splitmix64(s);
    return r;
}

/// Mixes a master seed with integer tags (iteration, sample index, ...).
inline std::uint64_t mix_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
    std::uint64_t s = master + 0x9e3779b97f4a7c15ULL * (a + 1) + 0x94d049bb133111ebULL * (b + 1);
    return splitmix64(s);
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    static Rng substream(std::uint64_t master, std::string_view name) {
        return Rng(substream_seed(master, name));
    }

    std::uint64_t next_u64() { return eng_(); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform01() { return (eng_() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n); rejection sampling, n >= 1.
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) throw ConfigError("uniform_int: empty range");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do {
            v = eng_();
        } while (v >= limit);
        return v % n;
    }

    /// Index drawn from an (approximately normalized) probability vector by inverse CDF.
    int discrete(std::span<const double> p) {
        double u = uniform01();
        double acc = 0.0;
        for (std::size_t i = 0; i + 1 < p.size(); ++i) {
            acc += p[i];
            if (u < acc) return static_cast<int>(i);
        }
        return static_cast<int>(p.size()) - 1;
    }

    /// Poisson draw; product method in chunks so large means cannot underflow.
    int poisson(double lambda) {
        if (lambda < 0) throw ConfigError("poisson: negative mean");
        int total = 0;
        while (lambda > 0) {
            double chunk = std::min(lambda, 30.0);
            lambda -= chunk;
            double limit = std::exp(-chunk);
            double prod = uniform01();
            int k = 0;
            while (prod > limit) {
                ++k;
                prod *= uniform01();
            }
            total += k;
        }
        return total;
    }

    /// Standard normal via Box-Muller (one value per pair of uniforms).
    double gaussian() {
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 == 0.0) u1 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    /// Fisher-Yates shuffle.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_int(i);
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 eng_;
};

}  // namespace factorcf
