#include "mvscale/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "mvscale/linalg.hpp"
#include "mvscale/parallel.hpp"
#include "mvscale/rng.hpp"

namespace mvscale::sim {

namespace {

using rng::NoiseSource;

std::vector<int> sample_steps(int total_steps, int sample_points) {
    const int want = std::max(2, std::min(sample_points, total_steps + 1));
    std::vector<int> out;
    out.reserve(want);
    for (int j = 0; j < want; ++j) {
        const int k = static_cast<int>(
            std::llround(static_cast<double>(j) * total_steps / (want - 1)));
        if (out.empty() || out.back() != k) out.push_back(k);
    }
    return out;
}

void check_finite(const double* v, int count, double t, const char* what) {
    for (int i = 0; i < count; ++i) {
        if (!(std::fabs(v[i]) <= kDivergenceThreshold))
            throw DivergenceError(std::string(what) + " diverged (|state| > 1e8 or NaN) at t=" +
                                      std::to_string(t),
                                  t);
    }
}

double sq_norm(const double* v, int d) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += v[i] * v[i];
    return s;
}

// Deterministic ensemble moments: per-coordinate pairwise sums over the
// particle-major buffer.
void ensemble_mean(const double* flat, int count, int dim, double* mean) {
    for (int j = 0; j < dim; ++j)
        mean[j] = linalg::pairwise_sum_strided(flat, count, dim, j) / count;
}

double ensemble_sqnorm_mean(const double* flat, int count, int dim, Vec& scratch) {
    scratch.resize(count);
    for (int i = 0; i < count; ++i) scratch[i] = sq_norm(flat + static_cast<size_t>(i) * dim, dim);
    return linalg::pairwise_sum(scratch) / count;
}

double ensemble_var(const double* flat, int count, int dim, const double* mean, Vec& scratch) {
    scratch.resize(count);
    for (int i = 0; i < count; ++i) {
        double s = 0.0;
        for (int j = 0; j < dim; ++j) {
            const double d = flat[static_cast<size_t>(i) * dim + j] - mean[j];
            s += d * d;
        }
        scratch[i] = s;
    }
    return linalg::pairwise_sum(scratch) / count;
}

// Crude local Lipschitz probe of f in the fast variable; guards the explicit
// scheme against dt_ratio too large for the fast contraction rate.
void check_fast_stability(const CoefficientSet& coeffs, const SimConfig& cfg,
                          std::span<const double> x0, std::span<const double> y0) {
    const auto& d = coeffs.dims();
    NoiseSource noise(cfg.seed);
    const EmpiricalMeasure mu = EmpiricalMeasure::dirac(Vec(x0.begin(), x0.end()));
    const MeasureView view = mu.view();
    Vec y1(d.m), y2(d.m), f1(d.m), f2(d.m);
    const double width = 1.0 + std::sqrt(sq_norm(y0.data(), d.m));
    double lip = 0.0;
    for (int s = 0; s < 8; ++s) {
        std::uint64_t c = 0;
        for (int i = 0; i < d.m; ++i)
            y1[i] = y0[i] + width * (2.0 * noise.uniform({0, 1, rng::kChanProbe,
                                                          static_cast<std::uint64_t>(s), c++}) - 1.0);
        for (int i = 0; i < d.m; ++i)
            y2[i] = y0[i] + width * (2.0 * noise.uniform({0, 1, rng::kChanProbe,
                                                          static_cast<std::uint64_t>(s), c++}) - 1.0);
        double dy2 = 0.0;
        for (int i = 0; i < d.m; ++i) dy2 += (y1[i] - y2[i]) * (y1[i] - y2[i]);
        const double dy = std::sqrt(dy2);
        if (dy < 1e-9) continue;
        coeffs.f(x0, view, y1, f1);
        coeffs.f(x0, view, y2, f2);
        double df = 0.0;
        for (int i = 0; i < d.m; ++i) df += (f1[i] - f2[i]) * (f1[i] - f2[i]);
        lip = std::max(lip, std::sqrt(df) / dy);
    }
    if (cfg.dt_ratio * lip >= 1.0)
        throw ConfigError("micro step unstable: dt_ratio * fast Lipschitz estimate = " +
                          std::to_string(cfg.dt_ratio * lip) + " >= 1");
}

struct MultiscaleOptions {
    double delta = 1.0;
    const ldp::Control* control = nullptr;
    const BbarProvider* coupled_bbar = nullptr;
    const ldp::SolvedPath* reference = nullptr;
};

PathRecord integrate_multiscale(const CoefficientSet& coeffs, const SimConfig& cfg,
                                std::span<const double> x0, std::span<const double> y0,
                                const MultiscaleOptions& opts) {
    cfg.validate();
    require(cfg.particles >= 2, "multiscale ensemble needs at least 2 particles");
    const auto& d = coeffs.dims();
    require(static_cast<int>(x0.size()) == d.n && static_cast<int>(y0.size()) == d.m,
            "initial condition dimension mismatch");
    if (opts.control) {
        require(opts.control->channels == d.d1 + d.d2,
                "control channel count must equal d1 + d2");
        require(opts.control->horizon >= cfg.horizon - 1e-12,
                "control grid does not cover the horizon");
    }
    if (opts.reference)
        require(opts.reference->dim == d.n, "reference path dimension mismatch");
    check_fast_stability(coeffs, cfg, x0, y0);

    const int N = cfg.particles;
    const int M = cfg.replicas;
    const int n = d.n, m = d.m;
    const int steps = std::max(1, static_cast<int>(std::llround(cfg.horizon /
                                                                (cfg.dt_ratio * cfg.epsilon))));
    const double dt = cfg.horizon / steps;
    const double rt = std::sqrt(dt);
    const double sqrt_delta = std::sqrt(opts.delta);
    const double inv_sqrt_eps = 1.0 / std::sqrt(cfg.epsilon);
    const double fast_ctrl_scale =
        opts.control ? dt / std::sqrt(opts.delta * cfg.epsilon) : 0.0;
    const bool coupled = opts.coupled_bbar != nullptr;

    const std::vector<int> samples = sample_steps(steps, cfg.sample_points);
    const int S = static_cast<int>(samples.size());

    PathRecord rec;
    rec.dim_x = n;
    rec.dim_y = m;
    rec.dim_z = coupled ? n : 0;
    rec.replicas = M;
    rec.particles = N;
    rec.epsilon = cfg.epsilon;
    rec.delta = opts.delta;
    rec.times.resize(S);
    for (int j = 0; j < S; ++j) rec.times[j] = samples[j] * dt;
    rec.mean_x.assign(static_cast<size_t>(M) * S * n, 0.0);
    rec.var_x.assign(static_cast<size_t>(M) * S, 0.0);
    rec.mean_y.assign(static_cast<size_t>(M) * S * m, 0.0);
    rec.var_y.assign(static_cast<size_t>(M) * S, 0.0);
    if (coupled) {
        rec.mean_z.assign(static_cast<size_t>(M) * S * n, 0.0);
        rec.var_z.assign(static_cast<size_t>(M) * S, 0.0);
        rec.mean_dev_sq.assign(static_cast<size_t>(M) * S, 0.0);
        rec.sup_dev_sq.assign(M, 0.0);
    }
    rec.sup_x6.assign(M, 0.0);
    rec.sup_y4.assign(M, 0.0);
    if (opts.reference) rec.sup_ref_dist.assign(M, 0.0);
    if (cfg.record_endpoint) {
        rec.endpoint_x.assign(static_cast<size_t>(M) * N * n, 0.0);
        rec.endpoint_y.assign(static_cast<size_t>(M) * N * m, 0.0);
        if (coupled) rec.endpoint_z.assign(static_cast<size_t>(M) * N * n, 0.0);
    }
    if (cfg.record_paths) rec.paths_x.assign(static_cast<size_t>(M) * S * N * n, 0.0);

    const NoiseSource noise(cfg.seed);

    const auto run_replica = [&](int rep) {
        Vec X(static_cast<size_t>(N) * n), Y(static_cast<size_t>(N) * m);
        Vec Xn(X.size()), Yn(Y.size());
        Vec XB, XBn;
        if (coupled) { XB.assign(X.size(), 0.0); XBn.assign(X.size(), 0.0); }

        // initial conditions (optionally Gaussian around the given point)
        for (int i = 0; i < N; ++i) {
            const std::uint64_t pfx = noise.particle_prefix(rep, i);
            for (int j = 0; j < n; ++j) {
                double v = x0[j];
                if (cfg.init_spread_x > 0.0)
                    v += cfg.init_spread_x *
                         NoiseSource::normal_from_prefix(pfx, rng::kChanInit, 0, j);
                X[static_cast<size_t>(i) * n + j] = v;
                if (coupled) XB[static_cast<size_t>(i) * n + j] = v;
            }
            for (int j = 0; j < m; ++j) {
                double v = y0[j];
                if (cfg.init_spread_y > 0.0)
                    v += cfg.init_spread_y *
                         NoiseSource::normal_from_prefix(pfx, rng::kChanInit, 1, j);
                Y[static_cast<size_t>(i) * m + j] = v;
            }
        }

        Vec meanx(n), meanxb(n), scratch;
        Vec supX(N), supY(N), supD, supR, refpt(n);
        for (int i = 0; i < N; ++i) {
            supX[i] = std::sqrt(sq_norm(&X[static_cast<size_t>(i) * n], n));
            supY[i] = std::sqrt(sq_norm(&Y[static_cast<size_t>(i) * m], m));
        }
        if (coupled) supD.assign(N, 0.0);
        if (opts.reference) {
            supR.assign(N, 0.0);
            opts.reference->eval(0.0, refpt);
            for (int i = 0; i < N; ++i) {
                double s = 0.0;
                for (int j = 0; j < n; ++j) {
                    const double dv = X[static_cast<size_t>(i) * n + j] - refpt[j];
                    s += dv * dv;
                }
                supR[i] = std::sqrt(s);
            }
        }

        Vec bout(n), sout(static_cast<size_t>(n) * d.d1), fout(m),
            gout(static_cast<size_t>(m) * d.d2), bbout(n), sbout(static_cast<size_t>(n) * d.d1),
            dW1(d.d1), dW2(d.d2);

        int next_sample = 0;
        for (int k = 0; k <= steps; ++k) {
            const double t = k * dt;
            ensemble_mean(X.data(), N, n, meanx.data());
            const double m2x = ensemble_sqnorm_mean(X.data(), N, n, scratch);
            const MeasureView mu{n, static_cast<size_t>(N), X.data(), meanx.data(), m2x};
            MeasureView mub;
            if (coupled) {
                ensemble_mean(XB.data(), N, n, meanxb.data());
                const double m2b = ensemble_sqnorm_mean(XB.data(), N, n, scratch);
                mub = MeasureView{n, static_cast<size_t>(N), XB.data(), meanxb.data(), m2b};
            }

            if (next_sample < S && samples[next_sample] == k) {
                const size_t si = rec.stat_index(rep, next_sample);
                for (int j = 0; j < n; ++j) rec.mean_x[si * n + j] = meanx[j];
                rec.var_x[si] = ensemble_var(X.data(), N, n, meanx.data(), scratch);
                Vec meany(m);
                ensemble_mean(Y.data(), N, m, meany.data());
                for (int j = 0; j < m; ++j) rec.mean_y[si * m + j] = meany[j];
                rec.var_y[si] = ensemble_var(Y.data(), N, m, meany.data(), scratch);
                if (coupled) {
                    scratch.resize(N);
                    Vec z(static_cast<size_t>(N) * n);
                    for (int i = 0; i < N; ++i)
                        for (int j = 0; j < n; ++j)
                            z[static_cast<size_t>(i) * n + j] =
                                (X[static_cast<size_t>(i) * n + j] -
                                 XB[static_cast<size_t>(i) * n + j]) * inv_sqrt_eps;
                    Vec meanz(n);
                    ensemble_mean(z.data(), N, n, meanz.data());
                    for (int j = 0; j < n; ++j) rec.mean_z[si * n + j] = meanz[j];
                    rec.var_z[si] = ensemble_var(z.data(), N, n, meanz.data(), scratch);
                    for (int i = 0; i < N; ++i)
                        scratch[i] = sq_norm(&z[static_cast<size_t>(i) * n], n) * cfg.epsilon;
                    rec.mean_dev_sq[si] = linalg::pairwise_sum(scratch) / N;
                }
                if (cfg.record_paths) {
                    const size_t base =
                        ((static_cast<size_t>(rep) * S) + next_sample) * N * n;
                    std::copy(X.begin(), X.end(), rec.paths_x.begin() + base);
                }
                ++next_sample;
            }
            if (k == steps) break;

            const double* p1h = nullptr;
            const double* p2h = nullptr;
            if (opts.control) {
                const auto hv = opts.control->values_at_interval(opts.control->interval_of(t));
                p1h = hv.data();
                p2h = hv.data() + d.d1;
            }

            for (int i = 0; i < N; ++i) {
                const double* xi = &X[static_cast<size_t>(i) * n];
                const double* yi = &Y[static_cast<size_t>(i) * m];
                double* xo = &Xn[static_cast<size_t>(i) * n];
                double* yo = &Yn[static_cast<size_t>(i) * m];
                const std::uint64_t pfx = noise.particle_prefix(rep, i);

                coeffs.b({xi, static_cast<size_t>(n)}, mu, {yi, static_cast<size_t>(m)}, bout);
                coeffs.sigma({xi, static_cast<size_t>(n)}, mu, sout);
                coeffs.f({xi, static_cast<size_t>(n)}, mu, {yi, static_cast<size_t>(m)}, fout);
                coeffs.g({xi, static_cast<size_t>(n)}, mu, {yi, static_cast<size_t>(m)}, gout);

                for (int c = 0; c < d.d1; ++c)
                    dW1[c] = rt * NoiseSource::normal_from_prefix(pfx, rng::kChanSlowNoise, k, c);
                for (int c = 0; c < d.d2; ++c)
                    dW2[c] = rt * NoiseSource::normal_from_prefix(pfx, rng::kChanFastNoise, k, c);

                for (int j = 0; j < n; ++j) {
                    double v = xi[j] + dt * bout[j];
                    double nse = 0.0, ctl = 0.0;
                    for (int c = 0; c < d.d1; ++c) {
                        nse += sout[static_cast<size_t>(j) * d.d1 + c] * dW1[c];
                        if (p1h) ctl += sout[static_cast<size_t>(j) * d.d1 + c] * p1h[c];
                    }
                    v += sqrt_delta * nse;
                    if (p1h) v += dt * ctl;
                    xo[j] = v;
                }
                for (int j = 0; j < m; ++j) {
                    double v = yi[j] + (dt / cfg.epsilon) * fout[j];
                    double nse = 0.0, ctl = 0.0;
                    for (int c = 0; c < d.d2; ++c) {
                        nse += gout[static_cast<size_t>(j) * d.d2 + c] * dW2[c];
                        if (p2h) ctl += gout[static_cast<size_t>(j) * d.d2 + c] * p2h[c];
                    }
                    v += inv_sqrt_eps * nse;
                    if (p2h) v += fast_ctrl_scale * ctl;
                    yo[j] = v;
                }

                if (coupled) {
                    const double* xbi = &XB[static_cast<size_t>(i) * n];
                    double* xbo = &XBn[static_cast<size_t>(i) * n];
                    opts.coupled_bbar->eval({xbi, static_cast<size_t>(n)}, mub, bbout);
                    coeffs.sigma({xbi, static_cast<size_t>(n)}, mub, sbout);
                    for (int j = 0; j < n; ++j) {
                        double nse = 0.0;
                        for (int c = 0; c < d.d1; ++c)
                            nse += sbout[static_cast<size_t>(j) * d.d1 + c] * dW1[c];
                        xbo[j] = xbi[j] + dt * bbout[j] + nse;
                    }
                }
            }

            const double tn = (k + 1) * dt;
            check_finite(Xn.data(), N * n, tn, "slow component");
            check_finite(Yn.data(), N * m, tn, "fast component");
            if (coupled) check_finite(XBn.data(), N * n, tn, "averaged component");

            if (opts.reference) opts.reference->eval(tn, refpt);
            for (int i = 0; i < N; ++i) {
                supX[i] = std::max(supX[i], std::sqrt(sq_norm(&Xn[static_cast<size_t>(i) * n], n)));
                supY[i] = std::max(supY[i], std::sqrt(sq_norm(&Yn[static_cast<size_t>(i) * m], m)));
                if (coupled) {
                    double dsq = 0.0;
                    for (int j = 0; j < n; ++j) {
                        const double dv = Xn[static_cast<size_t>(i) * n + j] -
                                          XBn[static_cast<size_t>(i) * n + j];
                        dsq += dv * dv;
                    }
                    supD[i] = std::max(supD[i], dsq);
                }
                if (opts.reference) {
                    double rsq = 0.0;
                    for (int j = 0; j < n; ++j) {
                        const double dv = Xn[static_cast<size_t>(i) * n + j] - refpt[j];
                        rsq += dv * dv;
                    }
                    supR[i] = std::max(supR[i], std::sqrt(rsq));
                }
            }

            X.swap(Xn);
            Y.swap(Yn);
            if (coupled) XB.swap(XBn);
        }

        // per-replica monitor reductions
        Vec tmp(N);
        for (int i = 0; i < N; ++i) tmp[i] = std::pow(supX[i], 6);
        rec.sup_x6[rep] = linalg::pairwise_sum(tmp) / N;
        for (int i = 0; i < N; ++i) tmp[i] = std::pow(supY[i], 4);
        rec.sup_y4[rep] = linalg::pairwise_sum(tmp) / N;
        if (coupled) rec.sup_dev_sq[rep] = linalg::pairwise_sum(supD) / N;
        if (opts.reference) rec.sup_ref_dist[rep] = linalg::pairwise_sum(supR) / N;

        if (cfg.record_endpoint) {
            std::copy(X.begin(), X.end(),
                      rec.endpoint_x.begin() + static_cast<size_t>(rep) * N * n);
            std::copy(Y.begin(), Y.end(),
                      rec.endpoint_y.begin() + static_cast<size_t>(rep) * N * m);
            if (coupled)
                for (int i = 0; i < N; ++i)
                    for (int j = 0; j < n; ++j)
                        rec.endpoint_z[(static_cast<size_t>(rep) * N + i) * n + j] =
                            (X[static_cast<size_t>(i) * n + j] -
                             XB[static_cast<size_t>(i) * n + j]) * inv_sqrt_eps;
        }
    };

    parallel::parallel_for(M, parallel::resolve_workers(cfg.workers), run_replica);
    return rec;
}

}  // namespace

void SimConfig::validate() const {
    if (!(epsilon > 0.0)) throw ConfigError("sim.epsilon must be > 0");
    if (!(delta > 0.0 && delta <= 1.0)) throw ConfigError("sim.delta must be in (0, 1]");
    if (!(dt_ratio > 0.0)) throw ConfigError("sim.dt_ratio must be > 0");
    if (!(horizon > 0.0)) throw ConfigError("sim.horizon must be > 0");
    if (dt_ratio * epsilon > horizon) throw ConfigError("micro step exceeds the horizon");
    if (replicas < 1) throw ConfigError("sim.replicas must be >= 1");
    if (particles < 1) throw ConfigError("sim.particles must be >= 1");
    if (macro_dt <= 0.0 || macro_dt > horizon) throw ConfigError("sim.macro_dt out of range");
}

PathRecord simulate_slowfast(const CoefficientSet& coeffs, const SimConfig& cfg,
                             std::span<const double> x0, std::span<const double> y0) {
    return integrate_multiscale(coeffs, cfg, x0, y0, {});
}

PathRecord simulate_smallnoise(const CoefficientSet& coeffs, const SimConfig& cfg,
                               std::span<const double> x0, std::span<const double> y0) {
    MultiscaleOptions opts;
    opts.delta = cfg.delta;
    return integrate_multiscale(coeffs, cfg, x0, y0, opts);
}

PathRecord simulate_controlled(const CoefficientSet& coeffs, const SimConfig& cfg,
                               const ldp::Control& control, std::span<const double> x0,
                               std::span<const double> y0) {
    MultiscaleOptions opts;
    opts.delta = cfg.delta;
    opts.control = &control;
    return integrate_multiscale(coeffs, cfg, x0, y0, opts);
}

PathRecord simulate_controlled_vs_reference(const CoefficientSet& coeffs, const SimConfig& cfg,
                                            const ldp::Control& control,
                                            const ldp::SolvedPath& reference,
                                            std::span<const double> x0,
                                            std::span<const double> y0) {
    MultiscaleOptions opts;
    opts.delta = cfg.delta;
    opts.control = &control;
    opts.reference = &reference;
    return integrate_multiscale(coeffs, cfg, x0, y0, opts);
}

PathRecord coupled_deviation(const CoefficientSet& coeffs, const SimConfig& cfg,
                             const BbarProvider& bbar, std::span<const double> x0,
                             std::span<const double> y0) {
    MultiscaleOptions opts;
    opts.coupled_bbar = &bbar;
    return integrate_multiscale(coeffs, cfg, x0, y0, opts);
}

PathRecord simulate_averaged(const CoefficientSet& coeffs, const SimConfig& cfg,
                             const BbarProvider& bbar, std::span<const double> x0) {
    cfg.validate();
    const auto& d = coeffs.dims();
    require(static_cast<int>(x0.size()) == d.n, "initial condition dimension mismatch");
    const int N = cfg.particles, M = cfg.replicas, n = d.n;
    const int steps = std::max(1, static_cast<int>(std::llround(cfg.horizon / cfg.macro_dt)));
    const double dt = cfg.horizon / steps;
    const double rt = std::sqrt(dt);
    const std::vector<int> samples = sample_steps(steps, cfg.sample_points);
    const int S = static_cast<int>(samples.size());

    PathRecord rec;
    rec.dim_x = n;
    rec.replicas = M;
    rec.particles = N;
    rec.epsilon = cfg.epsilon;
    rec.delta = cfg.delta;
    rec.times.resize(S);
    for (int j = 0; j < S; ++j) rec.times[j] = samples[j] * dt;
    rec.mean_x.assign(static_cast<size_t>(M) * S * n, 0.0);
    rec.var_x.assign(static_cast<size_t>(M) * S, 0.0);
    rec.sup_x6.assign(M, 0.0);
    if (cfg.record_endpoint) rec.endpoint_x.assign(static_cast<size_t>(M) * N * n, 0.0);
    if (cfg.record_paths) rec.paths_x.assign(static_cast<size_t>(M) * S * N * n, 0.0);

    const NoiseSource noise(cfg.seed);

    const auto run_replica = [&](int rep) {
        Vec X(static_cast<size_t>(N) * n), Xn(static_cast<size_t>(N) * n);
        for (int i = 0; i < N; ++i) {
            const std::uint64_t pfx = noise.particle_prefix(rep, i);
            for (int j = 0; j < n; ++j) {
                double v = x0[j];
                if (cfg.init_spread_x > 0.0)
                    v += cfg.init_spread_x *
                         NoiseSource::normal_from_prefix(pfx, rng::kChanInit, 0, j);
                X[static_cast<size_t>(i) * n + j] = v;
            }
        }
        Vec meanx(n), scratch, supX(N);
        for (int i = 0; i < N; ++i)
            supX[i] = std::sqrt(sq_norm(&X[static_cast<size_t>(i) * n], n));
        Vec bout(n), sout(static_cast<size_t>(n) * d.d1), dW1(d.d1);

        int next_sample = 0;
        for (int k = 0; k <= steps; ++k) {
            ensemble_mean(X.data(), N, n, meanx.data());
            const double m2x = ensemble_sqnorm_mean(X.data(), N, n, scratch);
            const MeasureView mu{n, static_cast<size_t>(N), X.data(), meanx.data(), m2x};

            if (next_sample < S && samples[next_sample] == k) {
                const size_t si = rec.stat_index(rep, next_sample);
                for (int j = 0; j < n; ++j) rec.mean_x[si * n + j] = meanx[j];
                rec.var_x[si] = ensemble_var(X.data(), N, n, meanx.data(), scratch);
                if (cfg.record_paths) {
                    const size_t base = ((static_cast<size_t>(rep) * S) + next_sample) * N * n;
                    std::copy(X.begin(), X.end(), rec.paths_x.begin() + base);
                }
                ++next_sample;
            }
            if (k == steps) break;

            for (int i = 0; i < N; ++i) {
                const double* xi = &X[static_cast<size_t>(i) * n];
                double* xo = &Xn[static_cast<size_t>(i) * n];
                const std::uint64_t pfx = noise.particle_prefix(rep, i);
                bbar.eval({xi, static_cast<size_t>(n)}, mu, bout);
                coeffs.sigma({xi, static_cast<size_t>(n)}, mu, sout);
                for (int c = 0; c < d.d1; ++c)
                    dW1[c] = rt * NoiseSource::normal_from_prefix(pfx, rng::kChanSlowNoise, k, c);
                for (int j = 0; j < n; ++j) {
                    double nse = 0.0;
                    for (int c = 0; c < d.d1; ++c)
                        nse += sout[static_cast<size_t>(j) * d.d1 + c] * dW1[c];
                    xo[j] = xi[j] + dt * bout[j] + nse;
                }
            }
            check_finite(Xn.data(), N * n, (k + 1) * dt, "averaged component");
            for (int i = 0; i < N; ++i)
                supX[i] = std::max(supX[i], std::sqrt(sq_norm(&Xn[static_cast<size_t>(i) * n], n)));
            X.swap(Xn);
        }

        Vec tmp(N);
        for (int i = 0; i < N; ++i) tmp[i] = std::pow(supX[i], 6);
        rec.sup_x6[rep] = linalg::pairwise_sum(tmp) / N;
        if (cfg.record_endpoint)
            std::copy(X.begin(), X.end(),
                      rec.endpoint_x.begin() + static_cast<size_t>(rep) * N * n);
    };

    parallel::parallel_for(M, parallel::resolve_workers(cfg.workers), run_replica);
    return rec;
}

void run_frozen(const CoefficientSet& coeffs, std::span<const double> x,
                const MeasureView& mu, std::span<const double> y0, double horizon,
                double step, std::uint64_t seed, std::uint64_t replica_tag,
                const std::function<void(int, double, std::span<const double>)>& visit) {
    const auto& d = coeffs.dims();
    const int m = d.m;
    const int steps = std::max(1, static_cast<int>(std::llround(horizon / step)));
    const double dt = horizon / steps;
    const double rt = std::sqrt(dt);
    const NoiseSource noise(seed);
    const std::uint64_t pfx = noise.particle_prefix(replica_tag, 0);

    Vec y(y0.begin(), y0.end()), yn(m), fout(m), gout(static_cast<size_t>(m) * d.d2), dW(d.d2);
    visit(0, 0.0, y);
    for (int k = 0; k < steps; ++k) {
        coeffs.f(x, mu, y, fout);
        coeffs.g(x, mu, y, gout);
        for (int c = 0; c < d.d2; ++c)
            dW[c] = rt * NoiseSource::normal_from_prefix(pfx, rng::kChanFastNoise, k, c);
        for (int j = 0; j < m; ++j) {
            double nse = 0.0;
            for (int c = 0; c < d.d2; ++c) nse += gout[static_cast<size_t>(j) * d.d2 + c] * dW[c];
            yn[j] = y[j] + dt * fout[j] + nse;
        }
        check_finite(yn.data(), m, (k + 1) * dt, "frozen fast component");
        y = yn;
        visit(k + 1, (k + 1) * dt, y);
    }
}

PathRecord simulate_frozen(const CoefficientSet& coeffs, std::span<const double> x,
                           const EmpiricalMeasure& mu, std::span<const double> y0,
                           double horizon, double step, std::uint64_t seed) {
    const auto& d = coeffs.dims();
    PathRecord rec;
    rec.dim_y = d.m;
    rec.replicas = 1;
    rec.particles = 1;
    const MeasureView view = mu.view();
    run_frozen(coeffs, x, view, y0, horizon, step, seed, 0,
               [&](int, double t, std::span<const double> y) {
                   rec.times.push_back(t);
                   for (int j = 0; j < d.m; ++j) rec.mean_y.push_back(y[j]);
                   rec.var_y.push_back(0.0);
               });
    return rec;
}

PathRecord simulate_limit_fluctuation(const CoefficientSet& coeffs, const SimConfig& cfg,
                                      const ThetaProvider& theta, const BbarProvider& bbar,
                                      std::span<const double> x0) {
    cfg.validate();
    const auto& d = coeffs.dims();
    require(static_cast<int>(x0.size()) == d.n, "initial condition dimension mismatch");
    const int N = cfg.particles, M = cfg.replicas, n = d.n;
    const int steps = std::max(1, static_cast<int>(std::llround(cfg.horizon / cfg.macro_dt)));
    const double dt = cfg.horizon / steps;
    const double rt = std::sqrt(dt);
    const std::vector<int> samples = sample_steps(steps, cfg.sample_points);
    const int S = static_cast<int>(samples.size());

    PathRecord rec;
    rec.dim_x = n;
    rec.dim_z = n;
    rec.replicas = M;
    rec.particles = N;
    rec.epsilon = cfg.epsilon;
    rec.delta = cfg.delta;
    rec.times.resize(S);
    for (int j = 0; j < S; ++j) rec.times[j] = samples[j] * dt;
    rec.mean_x.assign(static_cast<size_t>(M) * S * n, 0.0);
    rec.var_x.assign(static_cast<size_t>(M) * S, 0.0);
    rec.mean_z.assign(static_cast<size_t>(M) * S * n, 0.0);
    rec.var_z.assign(static_cast<size_t>(M) * S, 0.0);
    rec.sup_x6.assign(M, 0.0);
    if (cfg.record_endpoint) {
        rec.endpoint_x.assign(static_cast<size_t>(M) * N * n, 0.0);
        rec.endpoint_z.assign(static_cast<size_t>(M) * N * n, 0.0);
    }

    const NoiseSource noise(cfg.seed);

    const auto run_replica = [&](int rep) {
        Vec XB(static_cast<size_t>(N) * n), XBn(XB.size());
        Vec Z(static_cast<size_t>(N) * n, 0.0), Zn(Z.size());
        for (int i = 0; i < N; ++i) {
            const std::uint64_t pfx = noise.particle_prefix(rep, i);
            for (int j = 0; j < n; ++j) {
                double v = x0[j];
                if (cfg.init_spread_x > 0.0)
                    v += cfg.init_spread_x *
                         NoiseSource::normal_from_prefix(pfx, rng::kChanInit, 0, j);
                XB[static_cast<size_t>(i) * n + j] = v;
            }
        }

        Vec meanxb(n), scratch;
        Vec bout(n), sout(static_cast<size_t>(n) * d.d1), jac(static_cast<size_t>(n) * n),
            th(static_cast<size_t>(n) * n), dW1(d.d1), dWhat(n), mf(static_cast<size_t>(N) * n),
            sdx(static_cast<size_t>(n) * d.d1), mfs;
        const bool sigma_varies = !coeffs.sigma_is_constant();
        if (sigma_varies) mfs.assign(static_cast<size_t>(N) * n * d.d1, 0.0);

        int next_sample = 0;
        for (int k = 0; k <= steps; ++k) {
            ensemble_mean(XB.data(), N, n, meanxb.data());
            const double m2b = ensemble_sqnorm_mean(XB.data(), N, n, scratch);
            const MeasureView mub{n, static_cast<size_t>(N), XB.data(), meanxb.data(), m2b};

            if (next_sample < S && samples[next_sample] == k) {
                const size_t si = rec.stat_index(rep, next_sample);
                for (int j = 0; j < n; ++j) rec.mean_x[si * n + j] = meanxb[j];
                rec.var_x[si] = ensemble_var(XB.data(), N, n, meanxb.data(), scratch);
                Vec meanz(n);
                ensemble_mean(Z.data(), N, n, meanz.data());
                for (int j = 0; j < n; ++j) rec.mean_z[si * n + j] = meanz[j];
                rec.var_z[si] = ensemble_var(Z.data(), N, n, meanz.data(), scratch);
                ++next_sample;
            }
            if (k == steps) break;

            // mean-field contributions for all particles at once
            coeffs.fluctuation_meanfield(mub, Z.data(), mf.data());
            if (sigma_varies) coeffs.fluctuation_meanfield_sigma(mub, Z.data(), mfs.data());

            for (int i = 0; i < N; ++i) {
                const double* xbi = &XB[static_cast<size_t>(i) * n];
                const double* zi = &Z[static_cast<size_t>(i) * n];
                double* xbo = &XBn[static_cast<size_t>(i) * n];
                double* zo = &Zn[static_cast<size_t>(i) * n];
                const std::uint64_t pfx = noise.particle_prefix(rep, i);

                bbar.eval({xbi, static_cast<size_t>(n)}, mub, bout);
                coeffs.sigma({xbi, static_cast<size_t>(n)}, mub, sout);
                coeffs.averaged_drift_dx({xbi, static_cast<size_t>(n)}, mub, jac);
                theta.eval({xbi, static_cast<size_t>(n)}, mub, th);

                for (int c = 0; c < d.d1; ++c)
                    dW1[c] = rt * NoiseSource::normal_from_prefix(pfx, rng::kChanSlowNoise, k, c);
                for (int c = 0; c < n; ++c)
                    dWhat[c] = rt * NoiseSource::normal_from_prefix(pfx, rng::kChanLimitNoise, k, c);

                for (int j = 0; j < n; ++j) {
                    double nse = 0.0;
                    for (int c = 0; c < d.d1; ++c)
                        nse += sout[static_cast<size_t>(j) * d.d1 + c] * dW1[c];
                    xbo[j] = xbi[j] + dt * bout[j] + nse;
                }
                for (int j = 0; j < n; ++j) {
                    double drift = mf[static_cast<size_t>(i) * n + j];
                    for (int c = 0; c < n; ++c)
                        drift += jac[static_cast<size_t>(j) * n + c] * zi[c];
                    double nse = 0.0;
                    for (int c = 0; c < n; ++c)
                        nse += th[static_cast<size_t>(j) * n + c] * dWhat[c];
                    double sig_term = 0.0;
                    if (sigma_varies) {
                        coeffs.sigma_dx({xbi, static_cast<size_t>(n)}, mub,
                                        {zi, static_cast<size_t>(n)}, sdx);
                        const double* mi = &mfs[(static_cast<size_t>(i) * n + j) * d.d1];
                        for (int c = 0; c < d.d1; ++c)
                            sig_term += (sdx[static_cast<size_t>(j) * d.d1 + c] + mi[c]) * dW1[c];
                    }
                    zo[j] = zi[j] + dt * drift + nse + sig_term;
                }
            }

            const double tn = (k + 1) * dt;
            check_finite(XBn.data(), N * n, tn, "averaged component");
            check_finite(Zn.data(), N * n, tn, "fluctuation component");
            XB.swap(XBn);
            Z.swap(Zn);
        }

        Vec tmp(N);
        for (int i = 0; i < N; ++i)
            tmp[i] = std::pow(std::sqrt(sq_norm(&XB[static_cast<size_t>(i) * n], n)), 6);
        rec.sup_x6[rep] = linalg::pairwise_sum(tmp) / N;
        if (cfg.record_endpoint) {
            std::copy(XB.begin(), XB.end(),
                      rec.endpoint_x.begin() + static_cast<size_t>(rep) * N * n);
            std::copy(Z.begin(), Z.end(),
                      rec.endpoint_z.begin() + static_cast<size_t>(rep) * N * n);
        }
    };

    parallel::parallel_for(M, parallel::resolve_workers(cfg.workers), run_replica);
    return rec;
}

namespace {

void write_stat_rows(std::ostream& os, const PathRecord& rec, const char* name, const Vec& data,
                     int dim) {
    if (data.empty()) return;
    char buf[64];
    for (int r = 0; r < rec.replicas; ++r)
        for (size_t k = 0; k < rec.times.size(); ++k) {
            const size_t si = rec.stat_index(r, static_cast<int>(k));
            if (dim == 0) {
                std::snprintf(buf, sizeof buf, "%.17g", data[si]);
                os << rec.times[k] << ',' << r << ',' << name << ',' << buf << '\n';
            } else {
                for (int j = 0; j < dim; ++j) {
                    std::snprintf(buf, sizeof buf, "%.17g", data[si * dim + j]);
                    os << rec.times[k] << ',' << r << ',' << name << '[' << j << "]," << buf
                       << '\n';
                }
            }
        }
}

}  // namespace

void PathRecord::write_csv(std::ostream& os) const {
    os << "time,replica,statistic,value\n";
    write_stat_rows(os, *this, "mean_x", mean_x, dim_x);
    write_stat_rows(os, *this, "var_x", var_x, 0);
    write_stat_rows(os, *this, "mean_y", mean_y, dim_y);
    write_stat_rows(os, *this, "var_y", var_y, 0);
    write_stat_rows(os, *this, "mean_z", mean_z, dim_z);
    write_stat_rows(os, *this, "var_z", var_z, 0);
    write_stat_rows(os, *this, "mean_dev_sq", mean_dev_sq, 0);
    char buf[64];
    const double t_end = times.empty() ? 0.0 : times.back();
    const auto monitor = [&](const char* name, const Vec& v) {
        for (int r = 0; r < static_cast<int>(v.size()); ++r) {
            std::snprintf(buf, sizeof buf, "%.17g", v[r]);
            os << t_end << ',' << r << ',' << name << ',' << buf << '\n';
        }
    };
    monitor("sup_x6", sup_x6);
    monitor("sup_y4", sup_y4);
    monitor("sup_dev_sq", sup_dev_sq);
}

}  // namespace mvscale::sim
