#pragma once

#include <cstdint>
#include <random>

namespace mmpt {

// Single RNG type used everywhere so a run is reproducible from one seed.
class Rng {
  public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    double uniform() {
        return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) {
        return std::uniform_int_distribution<uint64_t>(0, n - 1)(engine_);
    }

    // Derive an independent stream, e.g. one per pipeline stage.
    Rng fork() { return Rng(engine_()); }

    std::mt19937_64& engine() { return engine_; }

  private:
    std::mt19937_64 engine_;
};

}  // namespace mmpt
