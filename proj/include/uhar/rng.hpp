#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include "uhar/common.hpp"

namespace uhar {

// All randomness flows from one root seed. Child streams are derived by
// hashing the parent seed with a stage name (FNV-1a) and scrambling with
// splitmix64, so every stage draws from an independent, reproducible stream
// regardless of call order.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view name) {
    return splitmix64(parent ^ fnv1a64(name));
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view name, std::uint64_t index) {
    return splitmix64(derive_seed(parent, name) + 0x9e3779b97f4a7c15ull * (index + 1));
}

// mt19937_64 with hand-rolled uniform/normal conversions. The engine is
// fully specified by the standard; std distributions are not, and metric
// files must be byte-identical across reruns.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // [0, 1), 53-bit resolution
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // (0, 1]
    double uniform_open() { return static_cast<double>((gen_() >> 11) + 1) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller with cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_open();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    void fill_normal(Vec& v) {
        for (double& x : v) x = normal();
    }

    Vec normal_vec(std::size_t n) {
        Vec v(n);
        fill_normal(v);
        return v;
    }

    // Uniform index in [0, n)
    std::size_t index(std::size_t n) {
        if (n == 0) throw Error("rng: index range must be non-empty");
        // rejection sampling keeps the draw unbiased
        const std::uint64_t limit = ~0ull - (~0ull % n);
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return static_cast<std::size_t>(x % n);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace uhar
