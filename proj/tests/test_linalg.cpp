#include <doctest.h>

#include <cmath>

#include "mvscale/linalg.hpp"

using namespace mvscale;
using linalg::Matrix;

TEST_CASE("pairwise sum matches a compensated reference") {
    Vec v(1001);
    for (size_t i = 0; i < v.size(); ++i) v[i] = std::sin(0.37 * i) * 1e-3 + 1.0;
    long double ref = 0.0;
    for (double x : v) ref += x;
    CHECK(linalg::pairwise_sum(v) == doctest::Approx(static_cast<double>(ref)).epsilon(1e-14));
    CHECK(linalg::pairwise_sum_strided(v.data(), v.size(), 1, 0) ==
          linalg::pairwise_sum(v));
}

TEST_CASE("symmetric eigen on a known 2x2") {
    Matrix a(2, 2);
    a(0, 0) = 2.0; a(0, 1) = 1.0;
    a(1, 0) = 1.0; a(1, 1) = 2.0;
    Vec vals;
    Matrix vecs;
    linalg::symmetric_eigen(a, vals, vecs);
    CHECK(vals[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(vals[1] == doctest::Approx(3.0).epsilon(1e-12));
    // reconstruct
    Matrix rec(2, 2);
    for (int k = 0; k < 2; ++k)
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) rec(i, j) += vals[k] * vecs(i, k) * vecs(j, k);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) CHECK(rec(i, j) == doctest::Approx(a(i, j)).epsilon(1e-12));
}

TEST_CASE("psd sqrt of a diagonal matrix") {
    Matrix a(2, 2);
    a(0, 0) = 2.0;
    a(1, 1) = 8.0;
    const auto res = linalg::psd_sqrt(a);
    CHECK(res.root(0, 0) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
    CHECK(res.root(1, 1) == doctest::Approx(2.0 * std::sqrt(2.0)).epsilon(1e-12));
    CHECK(res.root(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(!res.clipped);
}

TEST_CASE("psd sqrt clips roundoff negatives and rejects real ones") {
    Matrix tiny(2, 2);
    tiny(0, 0) = 1.0;
    tiny(1, 1) = -1e-12;  // roundoff-scale negative: clipped silently
    const auto silent = linalg::psd_sqrt(tiny);
    CHECK(silent.root(1, 1) == 0.0);
    CHECK(!silent.clipped);

    tiny(1, 1) = -1e-7;  // above the roundoff waterline: clipped with the flag
    const auto flagged = linalg::psd_sqrt(tiny);
    CHECK(flagged.root(1, 1) == 0.0);
    CHECK(flagged.clipped);

    Matrix bad(2, 2);
    bad(0, 0) = 1.0;
    bad(1, 1) = -0.5;
    CHECK_THROWS_AS(linalg::psd_sqrt(bad), EstimationError);
}

TEST_CASE("psd sqrt squares back to the symmetrized input") {
    Matrix a(3, 3);
    const double vals[9] = {4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) a(i, j) = vals[i * 3 + j];
    const auto res = linalg::psd_sqrt(a);
    const Matrix sq = linalg::matmul(res.root, res.root);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) CHECK(sq(i, j) == doctest::Approx(a(i, j)).epsilon(1e-10));
    // root is symmetric
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(res.root(i, j) == doctest::Approx(res.root(j, i)).epsilon(1e-12));
}
