#include <doctest.h>

#include <cmath>

#include "mvscale/rng.hpp"

using namespace mvscale;
using rng::NoiseSource;
using rng::StreamKey;

TEST_CASE("draws are pure functions of seed and key") {
    NoiseSource a(42), b(42), c(43);
    const StreamKey k{3, 17, rng::kChanSlowNoise, 250, 0};
    CHECK(a.normal(k) == b.normal(k));
    CHECK(a.normal(k) != c.normal(k));
}

TEST_CASE("channel tags separate streams") {
    NoiseSource src(kDefaultSeed);
    StreamKey k{0, 5, rng::kChanSlowNoise, 12, 0};
    const double slow = src.normal(k);
    k.channel = rng::kChanFastNoise;
    const double fast = src.normal(k);
    k.channel = rng::kChanLimitNoise;
    const double limit = src.normal(k);
    CHECK(slow != fast);
    CHECK(fast != limit);
    CHECK(slow != limit);
}

TEST_CASE("prefix form matches the full key form") {
    NoiseSource src(987654321);
    const StreamKey k{7, 1234, rng::kChanFastNoise, 999, 1};
    const auto prefix = src.particle_prefix(7, 1234);
    CHECK(src.normal(k) ==
          NoiseSource::normal_from_prefix(prefix, rng::kChanFastNoise, 999, 1));
}

TEST_CASE("normal quantile hits known values") {
    CHECK(rng::normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(rng::normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
    CHECK(rng::normal_quantile(0.8413447460685429) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(rng::normal_quantile(0.025) == doctest::Approx(-1.959963984540054).epsilon(1e-12));
    // mirrored where both p and 1-p are exactly representable
    CHECK(rng::normal_quantile(1.0 - 1e-4) ==
          doctest::Approx(-rng::normal_quantile(1e-4)).epsilon(1e-9));
    CHECK(std::isfinite(rng::normal_quantile(1e-14)));
    CHECK(rng::normal_quantile(1e-14) < -7.0);
}

TEST_CASE("stream moments look standard normal") {
    NoiseSource src(2024);
    const int n = 200000;
    double sum = 0.0, sum2 = 0.0, sum4 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = src.normal({0, 0, rng::kChanProbe, static_cast<std::uint64_t>(i), 0});
        sum += v;
        sum2 += v * v;
        sum4 += v * v * v * v;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    const double kurt = sum4 / n / (var * var);
    CHECK(std::fabs(mean) < 4.0 / std::sqrt(static_cast<double>(n)));
    CHECK(var == doctest::Approx(1.0).epsilon(0.02));
    CHECK(kurt == doctest::Approx(3.0).epsilon(0.05));
}
