#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <sstream>
#include <string>

#include "manidiff/errors.hpp"

namespace manidiff {

inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

// Stable stream derivation: sample k of a run keyed by `base` gets its own seed.
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
    unsigned char buf[16];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(base >> (8 * i));
    for (int i = 0; i < 8; ++i) buf[8 + i] = static_cast<unsigned char>(stream >> (8 * i));
    return fnv1a(buf, sizeof(buf));
}

// Deterministic RNG used for all randomness in the project. Normal variates
// come from Box-Muller rather than std::normal_distribution, whose algorithm
// is implementation-defined; uniform doubles use the top 53 bits directly.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : engine_(seed) {}

    uint64_t raw() { return engine_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n), rejection-sampled so the mapping is fully specified
    uint64_t integer(uint64_t n) {
        if (n == 0) throw InvalidInput("Rng::integer requires n > 0");
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return x % n;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    Rng fork(uint64_t stream) {
        return Rng(derive_seed(engine_(), stream));
    }

    // The spare normal is serialized by bit pattern; stream hexfloat parsing
    // is unreliable in libstdc++.
    std::string state() const {
        uint64_t bits;
        std::memcpy(&bits, &spare_, sizeof(bits));
        std::ostringstream ss;
        ss << engine_ << ' ' << (has_spare_ ? 1 : 0) << ' ' << bits;
        return ss.str();
    }

    void set_state(const std::string& s) {
        std::istringstream ss(s);
        int spare_flag = 0;
        uint64_t bits = 0;
        ss >> engine_ >> spare_flag >> bits;
        if (!ss) throw ParseError("bad Rng state string");
        has_spare_ = spare_flag != 0;
        std::memcpy(&spare_, &bits, sizeof(bits));
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace manidiff
