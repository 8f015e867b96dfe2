#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace omni {

// Deterministic RNG. The engine is std::mt19937_64 (bit-exact per the
// standard); the distributions are hand-rolled so the produced stream does
// not depend on the standard library implementation.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // uniform in [0,1) with 53-bit resolution
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller with a cached spare
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // uniform integer in [0, n), rejection sampled
    uint64_t below(uint64_t n);

    // k distinct indices drawn uniformly from [0, n), returned sorted
    std::vector<uint32_t> sample_without_replacement(uint32_t n, uint32_t k);

    // derive an independent stream seed from (seed, stream); splitmix64 based
    static uint64_t mix(uint64_t seed, uint64_t stream);

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace omni
