#include "omni/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "omni/errors.hpp"

namespace omni {

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double two_pi = 6.283185307179586476925286766559;
    double angle = uniform() * two_pi;
    double u = 1.0 - uniform();  // in (0,1], keeps log finite
    double radius = std::sqrt(-2.0 * std::log(u));
    spare_ = std::sin(angle) * radius;
    has_spare_ = true;
    return std::cos(angle) * radius;
}

uint64_t Rng::below(uint64_t n) {
    check(n > 0, ErrorKind::domain, "Rng::below requires n > 0");
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v = next_u64();
    while (v >= limit) {
        v = next_u64();
    }
    return v % n;
}

std::vector<uint32_t> Rng::sample_without_replacement(uint32_t n, uint32_t k) {
    check(k <= n, ErrorKind::domain, "sample_without_replacement: k > n");
    std::vector<uint32_t> pool(n);
    std::iota(pool.begin(), pool.end(), 0u);
    // partial Fisher-Yates: the first k slots end up uniform without replacement
    for (uint32_t i = 0; i < k; ++i) {
        uint32_t j = i + static_cast<uint32_t>(below(n - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

uint64_t Rng::mix(uint64_t seed, uint64_t stream) {
    // splitmix64 over the combined word
    uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace omni
