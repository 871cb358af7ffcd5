#include <doctest.h>

#include <cmath>

#include "mvscale/ldp.hpp"
#include "mvscale/model.hpp"
#include "mvscale/rng.hpp"

using namespace mvscale;
using ldp::Control;
using model::LinearModelParams;

namespace {

const LinearModelParams kRefParams{-1.0, 0.5, 1.0, 0.5, 0.25, 0.3, 1.0};

// closed form for the endpoint rate of the linear benchmark:
// I(target) = (target - e^{1/4})^2 / (2 sigma0^2 w), w = (1 - e^{2 lam}) / (-2 lam)
double lq_rate(double target) {
    const double lam = kRefParams.a1 + kRefParams.a3 * kRefParams.c1;  // -0.5
    const double w = (1.0 - std::exp(2.0 * lam)) / (-2.0 * lam);
    const double gap = target - std::exp(0.25);
    return gap * gap / (2.0 * kRefParams.sigma0 * kRefParams.sigma0 * w);
}

ldp::SolvedPath base_path(const model::CoefficientSet& m, const BbarProvider& bbar,
                          double T = 1.0) {
    return ldp::solve_averaged_ode(m, bbar, Vec{1.0}, T, 1e-4 * T);
}

}  // namespace

TEST_CASE("control energy is the exact quadrature of its values") {
    Control c = Control::zeros(2.0, 4, 3);
    c.values_at_interval(0)[0] = 1.0;
    c.values_at_interval(2)[1] = -2.0;
    // 0.5 * (1 + 4) * 0.5
    CHECK(c.energy() == doctest::Approx(1.25).epsilon(1e-15));
    CHECK(c.within_energy_bound(2.5));
    CHECK(!c.within_energy_bound(2.49));
}

TEST_CASE("uncontrolled skeleton follows the averaged flow") {
    const auto m = model::linear_model(kRefParams);
    const AnalyticBbarProvider bbar(m);
    const auto base = base_path(*m, bbar);
    CHECK(base.endpoint()[0] == doctest::Approx(std::exp(0.25)).epsilon(1e-9));

    const auto zero = Control::zeros(1.0, 32, 2);
    const auto path = ldp::solve_skeleton(*m, bbar, Vec{1.0}, zero, base);
    CHECK(path.endpoint()[0] == doctest::Approx(std::exp(0.25)).epsilon(1e-8));
}

TEST_CASE("degenerate slow diffusion makes the control ineffective") {
    LinearModelParams p = kRefParams;
    p.sigma0 = 0.0;
    const auto m = model::linear_model(p);
    const AnalyticBbarProvider bbar(m);
    const auto base = base_path(*m, bbar);
    auto ctl = Control::zeros(1.0, 32, 2);
    for (int k = 0; k < 32; ++k) ctl.values_at_interval(k)[0] = 3.0;
    const auto with = ldp::solve_skeleton(*m, bbar, Vec{1.0}, ctl, base);
    const auto without = ldp::solve_skeleton(*m, bbar, Vec{1.0},
                                             Control::zeros(1.0, 32, 2), base);
    CHECK(with.endpoint()[0] == doctest::Approx(without.endpoint()[0]).epsilon(1e-12));
}

TEST_CASE("constant slow-channel control shifts the endpoint by its convolution integral") {
    const auto m = model::linear_model(kRefParams);
    const AnalyticBbarProvider bbar(m);
    const auto base = base_path(*m, bbar);
    const double c = 1.7;
    auto ctl = Control::zeros(1.0, 64, 2);
    for (int k = 0; k < 64; ++k) ctl.values_at_interval(k)[0] = c;
    const auto path = ldp::solve_skeleton(*m, bbar, Vec{1.0}, ctl, base);
    const double expected =
        std::exp(0.25) + kRefParams.sigma0 * c * (1.0 - std::exp(-0.5)) / 0.5;
    CHECK(path.endpoint()[0] == doctest::Approx(expected).epsilon(1e-7));
}

TEST_CASE("adjoint gradient matches central finite differences") {
    const auto m = model::linear_model(kRefParams);
    const AnalyticBbarProvider bbar(m);
    const auto base = base_path(*m, bbar);
    const Vec target{2.0};
    const double rho = 100.0;
    rng::NoiseSource src(6);

    for (std::uint64_t trial = 0; trial < 5; ++trial) {
        Control ctl = Control::zeros(1.0, 16, 2);
        for (int k = 0; k < ctl.intervals; ++k)
            for (int ch = 0; ch < 2; ++ch)
                ctl.values_at_interval(k)[ch] =
                    src.normal({trial, static_cast<std::uint64_t>(k), rng::kChanProbe, 0,
                                static_cast<std::uint64_t>(ch)});

        const auto res = ldp::adjoint_gradient(*m, bbar, Vec{1.0}, ctl, target, rho, base);

        const double h = 1e-6;
        double max_rel = 0.0;
        for (int k = 0; k < ctl.intervals; ++k) {
            for (int ch = 0; ch < 2; ++ch) {
                Control up = ctl, dn = ctl;
                up.values_at_interval(k)[ch] += h;
                dn.values_at_interval(k)[ch] -= h;
                const double ju =
                    ldp::adjoint_gradient(*m, bbar, Vec{1.0}, up, target, rho, base).objective;
                const double jd =
                    ldp::adjoint_gradient(*m, bbar, Vec{1.0}, dn, target, rho, base).objective;
                const double fd = (ju - jd) / (2.0 * h);
                const double ad = res.gradient[static_cast<size_t>(k) * 2 + ch];
                max_rel = std::max(max_rel,
                                   std::fabs(fd - ad) / std::max(1.0, std::fabs(fd)));
            }
        }
        CHECK(max_rel < 1e-4);
    }
}

TEST_CASE("gradient vanishes at the unconstrained stationary point") {
    const auto m = model::linear_model(kRefParams);
    const AnalyticBbarProvider bbar(m);
    const auto base = base_path(*m, bbar);
    const auto zero = Control::zeros(1.0, 32, 2);
    const Vec free_target{base.endpoint()[0]};
    const auto res = ldp::adjoint_gradient(*m, bbar, Vec{1.0}, zero, free_target, 100.0, base);
    double norm = 0.0;
    for (double g : res.gradient) norm += g * g;
    CHECK(std::sqrt(norm) < 1e-8);
}

TEST_CASE("fast-channel gradient components vanish for slow-channel controls") {
    const auto m = model::linear_model(kRefParams);
    const AnalyticBbarProvider bbar(m);
    const auto base = base_path(*m, bbar);
    rng::NoiseSource src(13);
    Control ctl = Control::zeros(1.0, 16, 2);
    for (int k = 0; k < 16; ++k)
        ctl.values_at_interval(k)[0] =
            src.normal({0, static_cast<std::uint64_t>(k), rng::kChanProbe, 0, 0});
    const auto res = ldp::adjoint_gradient(*m, bbar, Vec{1.0}, ctl, Vec{2.0}, 1e3, base);
    for (int k = 0; k < 16; ++k)
        CHECK(res.gradient[static_cast<size_t>(k) * 2 + 1] == 0.0);
}

TEST_CASE("endpoint rate matches the closed form within two percent") {
    const auto m = model::linear_model(kRefParams);
    const AnalyticBbarProvider bbar(m);
    ldp::RateOptions opts;
    const auto res = ldp::rate_function(*m, bbar, Vec{1.0}, Vec{2.0}, opts);
    CHECK(res.status == ldp::RateStatus::converged);
    CHECK(res.rate == doctest::Approx(lq_rate(2.0)).epsilon(0.02));
    CHECK(res.residual < 1e-4 * 3.0);
    CHECK(!res.trace.empty());
}

TEST_CASE("free endpoint costs nothing") {
    const auto m = model::linear_model(kRefParams);
    const AnalyticBbarProvider bbar(m);
    ldp::RateOptions opts;
    const auto res = ldp::rate_function(*m, bbar, Vec{1.0}, Vec{std::exp(0.25)}, opts);
    CHECK(res.status == ldp::RateStatus::converged);
    CHECK(res.rate <= 1e-6);
}

TEST_CASE("unreachable target under degenerate diffusion signals infeasibility") {
    LinearModelParams p = kRefParams;
    p.sigma0 = 0.0;
    const auto m = model::linear_model(p);
    const AnalyticBbarProvider bbar(m);
    ldp::RateOptions opts;
    const auto res = ldp::rate_function(*m, bbar, Vec{1.0}, Vec{2.0}, opts);
    CHECK(res.status == ldp::RateStatus::infeasible);
    CHECK(std::isinf(res.rate));
}

TEST_CASE("rate is stable under control-grid refinement") {
    const auto m = model::linear_model(kRefParams);
    const AnalyticBbarProvider bbar(m);
    ldp::RateOptions coarse;
    coarse.grid_k = 32;
    ldp::RateOptions fine;
    fine.grid_k = 128;
    const double i32 = ldp::rate_function(*m, bbar, Vec{1.0}, Vec{2.0}, coarse).rate;
    const double i128 = ldp::rate_function(*m, bbar, Vec{1.0}, Vec{2.0}, fine).rate;
    CHECK(std::fabs(i32 - i128) <= 0.01 * i128);
}

TEST_CASE("optimized rates dominate the closed-form bound across targets") {
    const auto m = model::linear_model(kRefParams);
    const AnalyticBbarProvider bbar(m);
    ldp::RateOptions opts;
    for (double target : {1.5, 1.875, 2.25, 2.625, 3.0}) {
        const auto res = ldp::rate_function(*m, bbar, Vec{1.0}, Vec{target}, opts);
        CHECK(res.rate >= lq_rate(target) * 0.98);
        CHECK(res.rate <= lq_rate(target) * 1.02);
    }
}

TEST_CASE("rates grow with the distance from the free endpoint") {
    const auto m = model::linear_model(kRefParams);
    const AnalyticBbarProvider bbar(m);
    ldp::RateOptions opts;
    double prev = -1.0;
    for (double target : {1.4, 1.8, 2.2, 2.6, 3.0}) {
        const double rate = ldp::rate_function(*m, bbar, Vec{1.0}, Vec{target}, opts).rate;
        CHECK(rate > prev);
        prev = rate;
    }
}

TEST_CASE("optimal control profile matches the exponential shape on the slow channel") {
    const auto m = model::linear_model(kRefParams);
    const AnalyticBbarProvider bbar(m);
    ldp::RateOptions opts;
    const auto res = ldp::rate_function(*m, bbar, Vec{1.0}, Vec{2.0}, opts);

    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (int k = 0; k < res.control.intervals; ++k) {
        const double t = (k + 0.5) * res.control.dt();
        const double shape = std::exp(-0.5 * (1.0 - t));
        const double u = res.control.values_at_interval(k)[0];
        dot += u * shape;
        nu += u * u;
        nv += shape * shape;
        CHECK(res.control.values_at_interval(k)[1] == 0.0);  // fast channel untouched
    }
    const double cosine = dot / std::sqrt(nu * nv);
    CHECK(cosine >= 0.999);
}

TEST_CASE("controlled ensemble approaches the skeleton as the noise scale drops") {
    const auto m = model::linear_model(kRefParams);
    const AnalyticBbarProvider bbar(m);
    auto ctl = Control::zeros(1.0, 16, 2);
    for (int k = 0; k < 16; ++k)
        ctl.values_at_interval(k)[0] = std::sin(M_PI * (k + 0.5) / 16.0);
    sim::SimConfig cfg;
    cfg.horizon = 1.0;
    cfg.particles = 64;
    cfg.replicas = 3;
    cfg.seed = 19;
    const auto res = ldp::controlled_convergence_experiment(
        *m, ctl, {0.1, 0.05}, [](double d) { return d * d; }, cfg, bbar, Vec{1.0}, Vec{0.75});
    REQUIRE(res.rows.size() == 2);
    CHECK(res.rows[0].epsilon == doctest::Approx(0.01));
    CHECK(res.monotone);
    CHECK(res.rows[1].distance < res.rows[0].distance);
}

TEST_CASE("controlled experiment is deterministic per seed") {
    const auto m = model::linear_model(kRefParams);
    const AnalyticBbarProvider bbar(m);
    auto ctl = Control::zeros(1.0, 8, 2);
    for (int k = 0; k < 8; ++k) ctl.values_at_interval(k)[0] = 0.5;
    sim::SimConfig cfg;
    cfg.horizon = 1.0;
    cfg.particles = 16;
    cfg.replicas = 2;
    const auto rule = [](double d) { return 0.05 * d; };
    const auto r1 = ldp::controlled_convergence_experiment(*m, ctl, {0.2, 0.1}, rule, cfg, bbar,
                                                           Vec{1.0}, Vec{0.75});
    const auto r2 = ldp::controlled_convergence_experiment(*m, ctl, {0.2, 0.1}, rule, cfg, bbar,
                                                           Vec{1.0}, Vec{0.75});
    for (size_t i = 0; i < r1.rows.size(); ++i)
        CHECK(r1.rows[i].distance == r2.rows[i].distance);
}

TEST_CASE("rare-event probe on the whole space is certain") {
    const auto m = model::linear_model(kRefParams);
    sim::SimConfig cfg;
    cfg.horizon = 1.0;
    cfg.particles = 200;
    cfg.seed = 2;
    const auto res = ldp::naive_rare_probe(*m, cfg, -1e9, 1e9, {0.5, 0.25},
                                           [](double d) { return 0.01 * d; }, Vec{1.0},
                                           Vec{0.75});
    for (const auto& row : res.rows) {
        CHECK(row.p_hat == 1.0);
        CHECK(row.neg_delta_log_p == 0.0);
        CHECK(!row.flagged);
    }
}

TEST_CASE("rare-event probe flags unreachable events under frozen dynamics") {
    LinearModelParams p = kRefParams;
    p.sigma0 = 0.0;
    p.g0 = 0.0;
    const auto m = model::linear_model(p);
    sim::SimConfig cfg;
    cfg.horizon = 1.0;
    cfg.particles = 100;
    const auto res = ldp::naive_rare_probe(*m, cfg, 10.0, 11.0, {0.5},
                                           [](double d) { return 0.01 * d; }, Vec{1.0},
                                           Vec{0.75});
    CHECK(res.rows[0].flagged);
    CHECK(res.rows[0].p_hat == doctest::Approx(3.0 / 100.0));
}

TEST_CASE("rare-event probe lands within a factor of three of the rate value") {
    const auto m = model::linear_model(kRefParams);
    const AnalyticBbarProvider bbar(m);
    ldp::RateOptions opts;
    const double rate_ref = ldp::rate_function(*m, bbar, Vec{1.0}, Vec{1.6}, opts).rate;

    sim::SimConfig cfg;
    cfg.horizon = 1.0;
    cfg.particles = 500;
    cfg.replicas = 4;
    cfg.seed = 44;
    const auto res = ldp::naive_rare_probe(*m, cfg, 1.6, 2.2, {0.5, 0.25},
                                           [](double d) { return 0.01 * d; }, Vec{1.0},
                                           Vec{0.75}, rate_ref);
    for (const auto& row : res.rows) {
        CHECK(!row.flagged);
        CHECK(row.neg_delta_log_p > rate_ref / 3.0);
        CHECK(row.neg_delta_log_p < rate_ref * 3.0);
    }
}
