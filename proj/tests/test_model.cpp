#include <doctest.h>

#include <cmath>

#include "mvscale/model.hpp"
#include "mvscale/rng.hpp"

using namespace mvscale;
using measure::EmpiricalMeasure;
using model::CallbackModel;
using model::LinearModelParams;

namespace {

const LinearModelParams kRefParams{-1.0, 0.5, 1.0, 0.5, 0.25, 0.3, 1.0};

}  // namespace

TEST_CASE("linear model coefficient evaluations") {
    const auto m = model::linear_model(kRefParams);
    const auto mu = EmpiricalMeasure::dirac({1.0});
    const auto view = mu.view();
    Vec out(1);

    m->b(Vec{1.0}, view, Vec{2.0}, out);
    CHECK(out[0] == doctest::Approx(1.5).epsilon(1e-15));  // -1 + 0.5 + 2

    m->sigma(Vec{1.0}, view, out);
    CHECK(out[0] == 0.3);
    m->f(Vec{1.0}, view, Vec{2.0}, out);
    CHECK(out[0] == doctest::Approx(-2.0 + 0.5 + 0.25).epsilon(1e-15));
    m->g(Vec{1.0}, view, Vec{2.0}, out);
    CHECK(out[0] == 1.0);

    CHECK(m->has_analytic_oracle());
    m->averaged_drift_dx(Vec{1.0}, view, out);
    CHECK(out[0] == doctest::Approx(-0.5).epsilon(1e-15));  // a1 + a3 c1
    m->averaged_drift_dmu(Vec{1.0}, view, Vec{0.0}, out);
    CHECK(out[0] == doctest::Approx(0.75).epsilon(1e-15));  // a2 + a3 c2

    LinearModelParams decoupled = kRefParams;
    decoupled.a3 = 0.0;
    const auto m2 = model::linear_model(decoupled);
    m2->averaged_drift_dmu(Vec{1.0}, view, Vec{0.0}, out);
    CHECK(out[0] == doctest::Approx(decoupled.a2).epsilon(1e-15));
}

TEST_CASE("averaged-drift oracle") {
    CHECK(model::oracle_bbar(kRefParams, 1.0, 1.0) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(model::oracle_bbar(kRefParams, 0.0, 0.0) == 0.0);
    LinearModelParams p = kRefParams;
    p.a3 = 0.0;
    CHECK(model::oracle_bbar(p, 2.0, 0.0) == doctest::Approx(2.0 * p.a1).epsilon(1e-15));
}

TEST_CASE("frozen invariant-law oracle") {
    const auto [mean, var] = model::oracle_frozen_invariant(kRefParams, 1.0, 1.0);
    CHECK(mean == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(var == doctest::Approx(0.5).epsilon(1e-15));

    LinearModelParams noiseless = kRefParams;
    noiseless.g0 = 0.0;
    CHECK(model::oracle_frozen_invariant(noiseless, 1.0, 1.0).second == 0.0);
    const auto [m0, v0] = model::oracle_frozen_invariant(kRefParams, 0.0, 0.0);
    CHECK(m0 == 0.0);
    CHECK(v0 == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("Poisson-solution oracle and its generator identity") {
    CHECK(model::oracle_phi(kRefParams, 1.0, 1.0, 2.0) == doctest::Approx(1.25).epsilon(1e-15));
    CHECK(model::oracle_phi(kRefParams, 1.0, 1.0, 0.75) == doctest::Approx(0.0).epsilon(1e-15));
    LinearModelParams p = kRefParams;
    p.a3 = 0.0;
    CHECK(model::oracle_phi(p, 0.3, -0.4, 5.0) == 0.0);

    // generator applied to phi reproduces the negative centered drift:
    // f * dphi/dy + (g0^2/2) * d2phi/dy2 == -(b - bbar), second term zero
    rng::NoiseSource src(11);
    for (int i = 0; i < 20; ++i) {
        const std::uint64_t t = static_cast<std::uint64_t>(i);
        const double x = 2.0 * src.normal({t, 0, rng::kChanProbe, 0, 0});
        const double mean = 2.0 * src.normal({t, 1, rng::kChanProbe, 0, 0});
        const double y = 2.0 * src.normal({t, 2, rng::kChanProbe, 0, 0});
        const double dphi = kRefParams.a3;  // phi linear in y
        const double f = -y + kRefParams.c1 * x + kRefParams.c2 * mean;
        const double generator = f * dphi;
        const double b = kRefParams.a1 * x + kRefParams.a2 * mean + kRefParams.a3 * y;
        const double bbar = model::oracle_bbar(kRefParams, x, mean);
        CHECK(generator == doctest::Approx(-(b - bbar)).epsilon(1e-12));
    }
}

TEST_CASE("fluctuation-diffusion oracle") {
    CHECK(model::oracle_theta(kRefParams) == doctest::Approx(1.0).epsilon(1e-15));
    LinearModelParams p = kRefParams;
    p.a3 = 0.0;
    CHECK(model::oracle_theta(p) == 0.0);
    p.a3 = 0.5;
    p.g0 = 2.0;
    CHECK(model::oracle_theta(p) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("fluctuation-variance oracle") {
    CHECK(model::oracle_clt_variance(kRefParams, 1.0) ==
          doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-12));
    CHECK(model::oracle_clt_variance(kRefParams, 0.0) == 0.0);
    LinearModelParams p = kRefParams;
    p.a3 = 0.0;
    p.g0 = 0.0;
    CHECK(model::oracle_clt_variance(p, 3.0) == 0.0);
}

TEST_CASE("fluctuation-variance oracle is continuous across the small-rate switch") {
    // lambda = a1 + a3 c1; tune a1 to put lambda at +/- 1e-8
    for (double lam : {1e-8, -1e-8}) {
        LinearModelParams above = kRefParams;
        above.a1 = lam - above.a3 * above.c1;
        LinearModelParams below = above;
        below.a1 = (lam * 0.99) - below.a3 * below.c1;  // just inside the series branch
        const double va = model::oracle_clt_variance(above, 1.0);
        const double vb = model::oracle_clt_variance(below, 1.0);
        CHECK(std::fabs(va - vb) < 1e-9);
    }
}

TEST_CASE("dissipativity probe: exact margin on the linear model, any seed") {
    const auto m = model::linear_model(kRefParams);
    for (std::uint64_t seed : {1ULL, 999ULL}) {
        const double gamma = model::dissipativity_probe(*m, 200, seed);
        CHECK(gamma == doctest::Approx(2.0).epsilon(1e-12));
    }
}

TEST_CASE("dissipativity probe flags anti-dissipative drift") {
    const model::Dims dims{1, 1, 1, 1};
    const CallbackModel anti(
        dims,
        [](auto, const auto&, auto, std::span<double> out) { out[0] = 0.0; },
        [](auto, const auto&, std::span<double> out) { out[0] = 0.0; },
        [](auto, const auto&, std::span<const double> y, std::span<double> out) {
            out[0] = +y[0];
        },
        [](auto, const auto&, auto, std::span<double> out) { out[0] = 0.0; });
    CHECK(model::dissipativity_probe(anti, 200, 5) < 0.0);
}

TEST_CASE("dissipativity probe bounds a Lipschitz diffusion contribution") {
    // f = -2y, g with y-slope 0.1: margin >= 4 - 5 * 0.01 = 3.95
    const model::Dims dims{1, 1, 1, 1};
    const CallbackModel mdl(
        dims,
        [](auto, const auto&, auto, std::span<double> out) { out[0] = 0.0; },
        [](auto, const auto&, std::span<double> out) { out[0] = 0.0; },
        [](auto, const auto&, std::span<const double> y, std::span<double> out) {
            out[0] = -2.0 * y[0];
        },
        [](auto, const auto&, std::span<const double> y, std::span<double> out) {
            out[0] = 0.1 * std::sin(y[0]);
        });
    const double gamma = model::dissipativity_probe(mdl, 500, 42);
    CHECK(gamma >= 3.95 - 1e-9);
    CHECK(gamma <= 4.0 + 1e-9);
}

TEST_CASE("dissipativity probe propagates NaN as a model error") {
    const model::Dims dims{1, 1, 1, 1};
    const CallbackModel bad(
        dims,
        [](auto, const auto&, auto, std::span<double> out) { out[0] = 0.0; },
        [](auto, const auto&, std::span<double> out) { out[0] = 0.0; },
        [](auto, const auto&, auto, std::span<double> out) { out[0] = std::nan(""); },
        [](auto, const auto&, auto, std::span<double> out) { out[0] = 0.0; });
    CHECK_THROWS_AS(model::dissipativity_probe(bad, 100, 1), ModelError);
}

TEST_CASE("probe sample-count guard") {
    const auto m = model::linear_model(kRefParams);
    CHECK_THROWS_AS(model::dissipativity_probe(*m, 50, 1), StructuralError);
}

TEST_CASE("convolution model satisfies the contraction condition with margin") {
    const model::ConvolutionModelParams p;
    const auto m = model::convolution_model(p);
    const double gamma = model::dissipativity_probe(*m, 500, 7);
    CHECK(gamma > 0.0);
    CHECK(gamma >= 2.0 * p.kappa - 5.0 * p.g0 * p.g0 * p.gy * p.gy - 1e-9);
}

TEST_CASE("convolution coefficients average the kernel over the cloud") {
    const model::ConvolutionModelParams p;
    const auto m = model::convolution_model(p);
    const EmpiricalMeasure mu(1, {-0.5, 0.5});
    Vec out(1);
    m->b(Vec{0.2}, mu.view(), Vec{0.3}, out);
    const double expected =
        p.ab * 0.5 * (std::tanh(0.2 - 0.5) + std::tanh(0.2 + 0.5)) + p.by * std::tanh(0.3);
    CHECK(out[0] == doctest::Approx(expected).epsilon(1e-14));
}
