#include <doctest.h>

#include <cmath>

#include "mvscale/fluctuation.hpp"
#include "mvscale/model.hpp"
#include "mvscale/rng.hpp"

using namespace mvscale;
using model::LinearModelParams;
using sim::SimConfig;

namespace {

const LinearModelParams kRefParams{-1.0, 0.5, 1.0, 0.5, 0.25, 0.3, 1.0};

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace

TEST_CASE("KS statistic on exact inverse-transform samples stays small") {
    rng::NoiseSource src(1);
    std::vector<double> samples(10000);
    for (size_t i = 0; i < samples.size(); ++i)
        samples[i] = rng::normal_quantile(src.uniform({0, i, rng::kChanProbe, 0, 0}));
    const auto ks = fluctuation::ks_statistic(samples, normal_cdf);
    CHECK(ks.threshold95 == doctest::Approx(1.36 / 100.0).epsilon(1e-12));
    CHECK(ks.d < ks.threshold95);
}

TEST_CASE("KS statistic flags a degenerate constant sample") {
    std::vector<double> constant(500, 0.0);
    const auto ks = fluctuation::ks_statistic(constant, normal_cdf);
    CHECK(ks.d >= 0.5);
    CHECK(ks.d <= 1.0);
}

TEST_CASE("KS statistic stays within bounds when all mass sits left of the support") {
    std::vector<double> far_left(200, -100.0);
    const auto ks = fluctuation::ks_statistic(far_left, normal_cdf);
    CHECK(ks.d <= 1.0);
    CHECK(ks.d > 0.99);
}

TEST_CASE("KS statistic needs enough samples") {
    std::vector<double> few(50, 0.1);
    CHECK_THROWS_AS(fluctuation::ks_statistic(few, normal_cdf), StructuralError);
}

TEST_CASE("rate experiment rejects short epsilon lists") {
    const auto m = model::linear_model(kRefParams);
    const AnalyticBbarProvider bbar(m);
    SimConfig cfg;
    cfg.particles = 8;
    CHECK_THROWS_AS(fluctuation::averaging_rate_experiment(*m, cfg, {0.02, 0.01}, bbar,
                                                           Vec{1.0}, Vec{0.75}),
                    ConfigError);
    CHECK_THROWS_AS(fluctuation::averaging_rate_experiment(*m, cfg, {0.01, 0.02, 0.04}, bbar,
                                                           Vec{1.0}, Vec{0.75}),
                    ConfigError);
}

TEST_CASE("strong-error decay fits a slope near one") {
    const auto m = model::linear_model(kRefParams);
    const AnalyticBbarProvider bbar(m);
    SimConfig cfg;
    cfg.horizon = 1.0;
    cfg.particles = 300;
    cfg.replicas = 4;
    cfg.seed = 8;
    const auto fit = fluctuation::averaging_rate_experiment(
        *m, cfg, {0.04, 0.02, 0.01, 0.005}, bbar, Vec{1.0}, Vec{0.75});
    CHECK(fit.slope > 0.8);
    CHECK(fit.slope < 1.2);
    CHECK(fit.r2 > 0.95);
    for (const auto& p : fit.points) CHECK(p.se > 0.0);
}

TEST_CASE("decoupled slow drift leaves only coupling-free deviation") {
    LinearModelParams p = kRefParams;
    p.a3 = 0.0;
    const auto m = model::linear_model(p);
    const AnalyticBbarProvider bbar(m);
    SimConfig cfg;
    cfg.horizon = 1.0;
    cfg.particles = 64;
    cfg.replicas = 3;
    const auto fit = fluctuation::averaging_rate_experiment(*m, cfg, {0.04, 0.02, 0.01}, bbar,
                                                            Vec{1.0}, Vec{0.75});
    for (const auto& pt : fit.points) CHECK(pt.error < 1e-3);
}

TEST_CASE("fluctuation experiment: variance approaches the oracle as scales separate") {
    const auto m = model::linear_model(kRefParams);
    const AnalyticBbarProvider bbar(m);
    const auto theta = ConstantThetaProvider::scalar(model::oracle_theta(kRefParams));
    SimConfig cfg;
    cfg.epsilon = 0.005;
    cfg.particles = 1000;
    cfg.replicas = 4;
    cfg.seed = 2;
    const double oracle = model::oracle_clt_variance(kRefParams, 1.0);
    const auto report = fluctuation::clt_experiment(*m, cfg, theta, bbar, 1.0,
                                                    {0.02, 0.01, 0.005}, Vec{1.0}, Vec{0.75},
                                                    oracle);

    REQUIRE(report.pre_limit.size() == 3);
    // monotone approach with one combined-SE of slack per step
    for (size_t i = 1; i < report.pre_limit.size(); ++i) {
        const auto& a = report.pre_limit[i - 1];
        const auto& b = report.pre_limit[i];
        const double slack = std::sqrt(a.variance_se * a.variance_se +
                                       b.variance_se * b.variance_se);
        CHECK(std::fabs(b.variance - oracle) <=
              std::fabs(a.variance - oracle) + slack);
    }

    const auto& last = report.pre_limit.back();
    CHECK(std::fabs(last.variance - oracle) <= std::max(0.10 * oracle, 3.0 * last.variance_se));
    CHECK(std::fabs(last.mean) <= 3.0 * last.mean_se);
    CHECK(report.ks_ran);
    CHECK(!report.degenerate);

    // limiting ensemble agrees with the oracle within its own 3 SE
    CHECK(std::fabs(report.limit.variance - oracle) <= 3.0 * report.limit.variance_se);
    // and with the pre-limit cloud within the combined error
    CHECK(std::fabs(report.variance_gap) <=
          std::max(0.10 * oracle, 3.0 * report.variance_gap_se));

    CHECK(report.rate.slope > 0.8);
    CHECK(report.rate.slope < 1.2);
}

TEST_CASE("fluctuation experiment flags the degenerate zero-diffusion limit") {
    LinearModelParams p = kRefParams;
    p.a3 = 0.0;
    const auto m = model::linear_model(p);
    const AnalyticBbarProvider bbar(m);
    const auto theta = ConstantThetaProvider::scalar(0.0);
    SimConfig cfg;
    cfg.epsilon = 0.01;
    cfg.particles = 200;
    cfg.seed = 4;
    const auto report = fluctuation::clt_experiment(*m, cfg, theta, bbar, 1.0, {}, Vec{1.0},
                                                    Vec{0.75}, 0.0);
    CHECK(report.degenerate);
    CHECK(!report.ks_ran);
    CHECK(report.pre_limit.back().variance < 0.05);
}

TEST_CASE("limiting ensemble passes its own KS test in most seeded repetitions") {
    const auto m = model::linear_model(kRefParams);
    const AnalyticBbarProvider bbar(m);
    const auto theta = ConstantThetaProvider::scalar(model::oracle_theta(kRefParams));
    const double oracle = model::oracle_clt_variance(kRefParams, 1.0);
    const double sd = std::sqrt(oracle);

    int passed = 0;
    const int reps = 20;
    for (int r = 0; r < reps; ++r) {
        SimConfig cfg;
        cfg.horizon = 1.0;
        cfg.particles = 500;
        cfg.record_endpoint = true;
        cfg.seed = 100 + r;
        const auto rec = sim::simulate_limit_fluctuation(*m, cfg, theta, bbar, Vec{1.0});
        const auto ks = fluctuation::ks_statistic(
            std::vector<double>(rec.endpoint_z.begin(), rec.endpoint_z.end()),
            [sd](double z) { return 0.5 * std::erfc(-z / (sd * std::sqrt(2.0))); });
        if (ks.d < ks.threshold95) ++passed;
    }
    CHECK(passed >= 18);
}

TEST_CASE("sample moments carry delta-method errors") {
    rng::NoiseSource src(5);
    std::vector<double> x(5000);
    for (size_t i = 0; i < x.size(); ++i)
        x[i] = 2.0 * src.normal({0, i, rng::kChanProbe, 0, 0});
    const auto row = fluctuation::sample_moments(x);
    CHECK(row.variance == doctest::Approx(4.0).epsilon(0.1));
    CHECK(row.variance_se == doctest::Approx(4.0 * std::sqrt(2.0 / 5000.0)).epsilon(0.2));
    CHECK(row.mean_se == doctest::Approx(2.0 / std::sqrt(5000.0)).epsilon(0.1));
}
