#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "physiossl/rng.hpp"

using namespace physiossl;

TEST_CASE("identical seeds give identical streams") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) {
        CHECK(a.next_u64() == b.next_u64());
        CHECK(a.uniform() == b.uniform());
        CHECK(a.gaussian() == b.gaussian());
    }
}

TEST_CASE("derive_seed separates substreams") {
    const auto s1 = derive_seed(7, 1, 2, 3);
    const auto s2 = derive_seed(7, 1, 2, 4);
    const auto s3 = derive_seed(7, 2, 2, 3);
    CHECK(s1 != s2);
    CHECK(s1 != s3);
    CHECK(derive_seed(7, 1, 2, 3) == s1);
}

TEST_CASE("uniform stays in [0,1) and uniform_int in range") {
    Rng rng(1);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const auto v = rng.uniform_int(7);
        CHECK(v < 7);
    }
}

TEST_CASE("uniform_int covers all residues") {
    Rng rng(3);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 1000; ++i) seen.insert(rng.uniform_int(5));
    CHECK(seen.size() == 5);
}

TEST_CASE("gaussian has roughly standard moments") {
    Rng rng(11);
    const int n = 200000;
    double mean = 0.0, var = 0.0;
    std::vector<double> xs(n);
    for (double& x : xs) x = rng.gaussian();
    for (double x : xs) mean += x;
    mean /= n;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= n;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("shuffle produces a permutation") {
    Rng rng(5);
    auto p = rng.permutation(100);
    std::sort(p.begin(), p.end());
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == i);
}
