#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace reqedit {

// Bad inputs, shapes, schemas, file formats. CLI maps this to exit code 2.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// NaN/Inf escapes, divergence that cannot be recovered. CLI exit code 3.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    // splitmix64 over (seed ^ rotated stream); used to derive child seeds
    uint64_t z = seed ^ (stream + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Explicitly seeded RNG threaded through every stochastic op.
class Rng {
  public:
    explicit Rng(uint64_t seed) : engine_(seed), base_(seed) {}

    Rng child(uint64_t stream) const { return Rng(mix_seed(base_, stream)); }

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double log_uniform(double lo, double hi) {
        return std::exp(std::uniform_real_distribution<double>(std::log(lo), std::log(hi))(engine_));
    }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
    double normal(double mean, double stddev) { return std::normal_distribution<double>(mean, stddev)(engine_); }
    // integer in [0, n)
    int64_t next(int64_t n) { return std::uniform_int_distribution<int64_t>(0, n - 1)(engine_); }
    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    const T& choice(const std::vector<T>& options) {
        return options[static_cast<size_t>(next(static_cast<int64_t>(options.size())))];
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next(static_cast<int64_t>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::mt19937_64& engine() { return engine_; }

  private:
    std::mt19937_64 engine_;
    uint64_t base_ = 0;
};

uint64_t fnv1a64(const void* data, size_t n);

}  // namespace reqedit
