#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "cauirl/rng.hpp"

using namespace cauirl;

TEST_CASE("splitmix64 is a deterministic pure function") {
    CHECK(splitmix64(42) == splitmix64(42));
    CHECK(splitmix64(42) != splitmix64(43));
    CHECK(splitmix64(0) != 0);  // must not map zero to zero
}

TEST_CASE("derive_seed separates streams by tag") {
    const std::uint64_t base = 123456789;
    std::set<std::uint64_t> seeds;
    for (std::uint64_t tag = 0; tag < 64; ++tag) {
        seeds.insert(derive_seed(base, tag));
    }
    CHECK(seeds.size() == 64);  // no collisions across tags
    CHECK(derive_seed(base, 7) == derive_seed(base, 7));
    CHECK(derive_seed(base, 7) != derive_seed(base + 1, 7));
    // the three-argument form must not collide with the two-argument form
    CHECK(derive_seed(base, 7, 0) != derive_seed(base, 7));
    CHECK(derive_seed(base, 3, 5) != derive_seed(base, 5, 3));
}

TEST_CASE("Rng reproduces identical sequences from identical seeds") {
    Rng a(99), b(99);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.uniform() == b.uniform());
    }
    Rng c(99), d(100);
    int diffs = 0;
    for (int i = 0; i < 100; ++i) {
        if (c.uniform() != d.uniform()) ++diffs;
    }
    CHECK(diffs > 90);
}

TEST_CASE("uniform stays in the half-open unit interval") {
    Rng rng(7);
    double lo = 1.0, hi = 0.0, sum = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
        sum += u;
    }
    CHECK(lo < 0.01);
    CHECK(hi > 0.99);
    // mean of U(0,1): 0.5, sd of the mean = 1/sqrt(12 n)
    CHECK(std::abs(sum / n - 0.5) < 3.0 / std::sqrt(12.0 * n));
}

TEST_CASE("uniform_index covers its range uniformly") {
    Rng rng(11);
    const std::size_t k = 10;
    const int n = 10000;
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
        std::size_t v = rng.uniform_index(k);
        REQUIRE(v < k);
        ++counts[v];
    }
    const double expect = double(n) / k;
    const double sigma = std::sqrt(n * (1.0 / k) * (1.0 - 1.0 / k));
    for (std::size_t i = 0; i < k; ++i) {
        CHECK(std::abs(counts[i] - expect) < 3.0 * sigma);
    }
    CHECK(rng.uniform_index(1) == 0);
}

TEST_CASE("bernoulli respects edge probabilities and frequency") {
    Rng rng(13);
    for (int i = 0; i < 1000; ++i) {
        CHECK_FALSE(rng.bernoulli(0.0));
        CHECK(rng.bernoulli(1.0));
    }
    const int n = 10000;
    const double p = 0.3;
    int hits = 0;
    for (int i = 0; i < n; ++i) {
        if (rng.bernoulli(p)) ++hits;
    }
    const double sigma = std::sqrt(n * p * (1 - p));
    CHECK(std::abs(hits - n * p) < 3.0 * sigma);
}

TEST_CASE("normal matches standard moments") {
    Rng rng(17);
    const int n = 20000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        double z = rng.normal();
        sum += z;
        sumsq += z * z;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    CHECK(std::abs(mean) < 3.0 / std::sqrt(double(n)));
    // var of the sample variance of a normal is ~2/n
    CHECK(std::abs(var - 1.0) < 3.0 * std::sqrt(2.0 / n));
}

TEST_CASE("shuffle produces a permutation and is seed-deterministic") {
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    std::vector<int> w = v;

    Rng a(23);
    a.shuffle(v);
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == w);
    CHECK(v != w);  // 50 elements: identity permutation is essentially impossible

    std::vector<int> v2(50);
    std::iota(v2.begin(), v2.end(), 0);
    Rng b(23);
    b.shuffle(v2);
    CHECK(v == v2);
}
