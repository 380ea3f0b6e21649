#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace cauirl {

// splitmix64 step; used to derive independent named sub-stream seeds from a
// base seed, e.g. derive_seed(base, epoch, batch_index).
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a) {
    return splitmix64(splitmix64(base) ^ (a * 0x9e3779b97f4a7c15ULL));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
    return derive_seed(derive_seed(base, a), b);
}

// Seeded generator with hand-rolled distributions. mt19937_64's raw output is
// pinned by the standard, so sequences are identical across platforms; the
// standard library's distribution adapters are not, which is why uniform,
// bernoulli and normal draws are implemented here directly.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // uniform double in [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n); rejection sampling keeps it unbiased
    std::size_t uniform_index(std::size_t n) {
        if (n == 0)
            return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = gen_();
        while (x >= limit)
            x = gen_();
        return static_cast<std::size_t>(x % n);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // standard normal via Box-Muller; each call consumes two uniforms
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0)
            u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    template <typename T> void shuffle(std::vector<T> &v) {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[uniform_index(i)]);
    }

    std::mt19937_64 &engine() { return gen_; }

private:
    std::mt19937_64 gen_;
};

} // namespace cauirl
