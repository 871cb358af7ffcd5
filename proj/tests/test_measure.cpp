#include <doctest.h>

#include <cmath>

#include "mvscale/measure.hpp"
#include "mvscale/rng.hpp"

using namespace mvscale;
using measure::EmpiricalMeasure;

TEST_CASE("moments of simple clouds") {
    // Dirac at the origin: all moments vanish
    const auto dirac0 = EmpiricalMeasure::dirac({0.0});
    CHECK(measure::moment(dirac0, 2)[0] == 0.0);

    // symmetric two-point cloud: second moment 1
    const EmpiricalMeasure pm1(1, {-1.0, 1.0});
    CHECK(measure::moment(pm1, 2)[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(measure::moment(pm1, 1)[0] == doctest::Approx(0.0).epsilon(1e-15));

    // uniform over {0,1,2,3}: mean 1.5
    const EmpiricalMeasure unif(1, {0.0, 1.0, 2.0, 3.0});
    CHECK(measure::moment(unif, 1)[0] == doctest::Approx(1.5).epsilon(1e-15));
}

TEST_CASE("moment preconditions and invariants") {
    const EmpiricalMeasure m(1, {1.0, 2.0});
    CHECK_THROWS_AS(measure::moment(m, 0), StructuralError);
    CHECK_THROWS_AS(measure::moment(m, 9), StructuralError);
    CHECK_THROWS_AS(EmpiricalMeasure(1, {1.0, 2.0}, {0.8, 0.1}), StructuralError);
    CHECK_THROWS_AS(EmpiricalMeasure(1, {1.0, std::nan("")}), StructuralError);
    CHECK_THROWS_AS(EmpiricalMeasure(2, {1.0, 2.0, 3.0}), StructuralError);
}

TEST_CASE("w2 on point masses and identical measures") {
    CHECK(measure::w2(EmpiricalMeasure::dirac({0.0}), EmpiricalMeasure::dirac({3.0})) ==
          doctest::Approx(3.0).epsilon(1e-15));
    const EmpiricalMeasure mu(1, {0.4, -1.2, 2.5, 0.0});
    CHECK(measure::w2(mu, mu) == 0.0);
}

TEST_CASE("w2 of interleaved two-point measures equals the monotone coupling cost") {
    // brute force over both couplings of these equal-weight pairs:
    // (0->1, 2->3): cost sqrt((1+1)/2) = 1;  (0->3, 2->1): sqrt((9+1)/2)
    const EmpiricalMeasure mu(1, {0.0, 2.0});
    const EmpiricalMeasure nu(1, {1.0, 3.0});
    const double direct = std::sqrt((1.0 + 1.0) / 2.0);
    const double crossed = std::sqrt((9.0 + 1.0) / 2.0);
    CHECK(direct < crossed);
    CHECK(measure::w2(mu, nu) == doctest::Approx(direct).epsilon(1e-15));
}

TEST_CASE("w2 merged-quantile path handles unequal sizes and weights") {
    // nu splits one atom of mu in half; distance must be zero
    const EmpiricalMeasure mu(1, {0.0, 1.0});
    const EmpiricalMeasure nu(1, {0.0, 1.0, 1.0}, {0.5, 0.25, 0.25});
    CHECK(measure::w2(mu, nu) == doctest::Approx(0.0).epsilon(1e-12));

    // quantile computation against a hand-worked value:
    // mu = uniform{0, 2}, nu = {0 w 3/4, 4 w 1/4}
    // quantile segments: [0,1/2): 0 vs 0; [1/2,3/4): 2 vs 0; [3/4,1): 2 vs 4
    const EmpiricalMeasure a(1, {0.0, 2.0});
    const EmpiricalMeasure b(1, {0.0, 4.0}, {0.75, 0.25});
    const double expected = std::sqrt(0.25 * 4.0 + 0.25 * 4.0);
    CHECK(measure::w2(a, b) == doctest::Approx(expected).epsilon(1e-12));
}

namespace {

EmpiricalMeasure random_measure_1d(rng::NoiseSource& src, std::uint64_t tag, size_t count) {
    Vec pts(count);
    for (size_t i = 0; i < count; ++i)
        pts[i] = 3.0 * src.normal({tag, i, rng::kChanProbe, 0, 0});
    return EmpiricalMeasure(1, std::move(pts));
}

}  // namespace

TEST_CASE("w2 symmetry, triangle inequality and translation covariance in 1-d") {
    rng::NoiseSource src(kDefaultSeed);
    for (std::uint64_t trial = 0; trial < 25; ++trial) {
        const auto mu = random_measure_1d(src, 3 * trial, 8 + trial % 5);
        const auto nu = random_measure_1d(src, 3 * trial + 1, 6 + trial % 7);
        const auto rho = random_measure_1d(src, 3 * trial + 2, 9);

        const double dmn = measure::w2(mu, nu);
        CHECK(measure::w2(nu, mu) == dmn);  // exact symmetry in 1-d mode
        CHECK(dmn >= 0.0);
        CHECK(dmn <= measure::w2(mu, rho) + measure::w2(rho, nu) + 1e-10);

        const Vec shift{1.75};
        CHECK(measure::w2(mu.translated(shift), nu.translated(shift)) ==
              doctest::Approx(dmn).epsilon(1e-9));
    }
}

TEST_CASE("sliced distance for dim > 1 sees separation and near-identity") {
    // two 2-d clouds separated by a unit shift in x
    Vec pa, pb;
    rng::NoiseSource src(7);
    for (size_t i = 0; i < 64; ++i) {
        const double u = src.normal({0, i, rng::kChanProbe, 0, 0});
        const double v = src.normal({0, i, rng::kChanProbe, 0, 1});
        pa.push_back(u);
        pa.push_back(v);
        pb.push_back(u + 1.0);
        pb.push_back(v);
    }
    const EmpiricalMeasure mu(2, pa);
    const EmpiricalMeasure nu(2, pb);
    const double d = measure::w2(mu, nu);
    // sliced distance of a pure translation: E|<e,dir>|^2 over directions = 1/2
    CHECK(d == doctest::Approx(std::sqrt(0.5)).epsilon(0.25));
    CHECK(measure::w2(mu, mu) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK_THROWS_AS(measure::w2(mu, EmpiricalMeasure::dirac({1.0})), StructuralError);
}

TEST_CASE("second moment agrees with the mean of squared norms") {
    rng::NoiseSource src(99);
    Vec pts;
    for (size_t i = 0; i < 50; ++i) {
        pts.push_back(src.normal({1, i, rng::kChanProbe, 0, 0}));
        pts.push_back(src.normal({1, i, rng::kChanProbe, 0, 1}));
    }
    const EmpiricalMeasure mu(2, pts);
    double ref = 0.0;
    for (size_t i = 0; i < mu.count(); ++i) {
        const auto p = mu.point(i);
        ref += (p[0] * p[0] + p[1] * p[1]) / mu.count();
    }
    CHECK(mu.second_moment() == doctest::Approx(ref).epsilon(1e-14));
    const auto m2 = measure::moment(mu, 2);
    CHECK(m2[0] + m2[1] == doctest::Approx(ref).epsilon(1e-14));
}
