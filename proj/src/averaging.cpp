#include "mvscale/averaging.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "mvscale/parallel.hpp"
#include "mvscale/rng.hpp"
#include "mvscale/sim.hpp"

namespace mvscale::averaging {

namespace {

std::uint64_t hash_double(std::uint64_t state, double v) {
    return rng::fold(state, std::bit_cast<std::uint64_t>(v));
}

void mean_and_se_over_replicas(const Vec& per_replica, int replicas, int dim, Matrix& value,
                               Matrix& se) {
    value = Matrix(dim, 1);
    se = Matrix(dim, 1);
    for (int j = 0; j < dim; ++j) {
        const double m =
            linalg::pairwise_sum_strided(per_replica.data(), replicas, dim, j) / replicas;
        double ss = 0.0;
        for (int r = 0; r < replicas; ++r) {
            const double d = per_replica[static_cast<size_t>(r) * dim + j] - m;
            ss += d * d;
        }
        value(j, 0) = m;
        se(j, 0) = replicas > 1 ? std::sqrt(ss / (replicas - 1) / replicas) : 0.0;
    }
}

}  // namespace

EstimatorOpts::Resolved EstimatorOpts::resolve() const {
    if (!(gamma > 0.0))
        throw AssumptionError(
            "estimator requires a positive dissipativity margin (gamma_est <= 0: the frozen "
            "equation has no certified unique invariant measure)");
    Resolved r;
    r.gamma = gamma;
    r.burn_in = burn_in > 0 ? burn_in : 10.0 / gamma;
    r.spacing = spacing > 0 ? spacing : 1.0 / gamma;
    r.horizon = horizon > 0 ? horizon : r.burn_in + 20.0 * r.spacing;
    r.step = step > 0 ? step : 0.1 / gamma;
    if (r.step >= 2.0 / gamma)
        throw ConfigError("frozen step too large for stability: step >= 2/gamma");
    r.phi_horizon = phi_horizon > 0 ? phi_horizon : 12.0 / gamma;
    r.replicas = replicas;
    r.seed = seed;
    if (r.replicas < 2) throw ConfigError("estimator needs at least 2 replicas");
    if (r.horizon <= r.burn_in)
        throw ConfigError("estimator horizon must exceed the burn-in window");
    return r;
}

namespace {

// Pools frozen-path states after burn-in at the decorrelation spacing.
// Slot layout is fixed per replica, so the parallel fill is deterministic.
Vec pooled_samples(const CoefficientSet& coeffs, std::span<const double> x,
                   const MeasureView& mu, const EstimatorOpts::Resolved& r, int workers,
                   size_t* per_replica_out) {
    const int m = coeffs.dims().m;
    const int steps = std::max(1, static_cast<int>(std::llround(r.horizon / r.step)));
    const double dt = r.horizon / steps;
    const int first = static_cast<int>(std::ceil(r.burn_in / dt));
    const int stride = std::max(1, static_cast<int>(std::llround(r.spacing / dt)));
    size_t per_replica = 0;
    for (int k = first; k <= steps; k += stride) ++per_replica;
    require(per_replica > 0, "sample_invariant: no samples after burn-in");

    Vec pool(per_replica * static_cast<size_t>(r.replicas) * m);
    const Vec y0(m, 0.0);
    parallel::parallel_for(r.replicas, workers, [&](int rep) {
        size_t slot = static_cast<size_t>(rep) * per_replica;
        sim::run_frozen(coeffs, x, mu, y0, r.horizon, r.step, r.seed,
                        static_cast<std::uint64_t>(rep),
                        [&](int k, double, std::span<const double> y) {
                            if (k >= first && (k - first) % stride == 0) {
                                for (int j = 0; j < m; ++j) pool[slot * m + j] = y[j];
                                ++slot;
                            }
                        });
    });
    if (per_replica_out) *per_replica_out = per_replica;
    return pool;
}

AveragedField estimate_bbar_view(const CoefficientSet& coeffs, std::span<const double> x,
                                 const MeasureView& mu, const EstimatorOpts& opts) {
    const auto r = opts.resolve();
    const int n = coeffs.dims().n;
    const int m = coeffs.dims().m;
    const int steps = std::max(1, static_cast<int>(std::llround(r.horizon / r.step)));
    const double dt = r.horizon / steps;
    const int first = static_cast<int>(std::ceil(r.burn_in / dt));
    const int stride = std::max(1, static_cast<int>(std::llround(r.spacing / dt)));

    Vec per_replica(static_cast<size_t>(r.replicas) * n, 0.0);
    std::vector<size_t> counts(r.replicas, 0);
    parallel::parallel_for(r.replicas, parallel::resolve_workers(0), [&](int rep) {
        Vec bout(n), acc(n, 0.0);
        const Vec y0(m, 0.0);
        size_t cnt = 0;
        sim::run_frozen(coeffs, x, mu, y0, r.horizon, r.step, r.seed,
                        static_cast<std::uint64_t>(rep),
                        [&](int k, double, std::span<const double> y) {
                            if (k >= first && (k - first) % stride == 0) {
                                coeffs.b(x, mu, y, bout);
                                for (int j = 0; j < n; ++j) acc[j] += bout[j];
                                ++cnt;
                            }
                        });
        for (int j = 0; j < n; ++j)
            per_replica[static_cast<size_t>(rep) * n + j] = acc[j] / static_cast<double>(cnt);
        counts[rep] = cnt;
    });

    AveragedField out;
    mean_and_se_over_replicas(per_replica, r.replicas, n, out.value, out.std_error);
    out.meta.burn_in = r.burn_in;
    out.meta.horizon = r.horizon;
    out.meta.replicas = r.replicas;
    out.meta.step = r.step;
    out.meta.pool_size = counts[0] * r.replicas;
    return out;
}

// Per-replica trapezoidal integrals of the centered drift along frozen paths
// started at y, plus the last-decile partial integral. Returns replicas x n
// (integrals) and replicas x n (tails).
void phi_replica_integrals(const CoefficientSet& coeffs, std::span<const double> bbar_val,
                           std::span<const double> x, const MeasureView& mu,
                           std::span<const double> y, const EstimatorOpts::Resolved& r,
                           Vec& integrals, Vec& tails) {
    const int n = coeffs.dims().n;
    const int steps = std::max(1, static_cast<int>(std::llround(r.phi_horizon / r.step)));
    const double dt = r.phi_horizon / steps;
    const int tail_start = static_cast<int>(std::llround(0.9 * steps));

    integrals.assign(static_cast<size_t>(r.replicas) * n, 0.0);
    tails.assign(static_cast<size_t>(r.replicas) * n, 0.0);
    parallel::parallel_for(r.replicas, parallel::resolve_workers(0), [&](int rep) {
        Vec bout(n);
        double* acc = &integrals[static_cast<size_t>(rep) * n];
        double* tail = &tails[static_cast<size_t>(rep) * n];
        sim::run_frozen(coeffs, x, mu, y, r.phi_horizon, r.step, r.seed,
                        static_cast<std::uint64_t>(rep),
                        [&](int k, double, std::span<const double> ys) {
                            coeffs.b(x, mu, ys, bout);
                            const double w = (k == 0 || k == steps) ? 0.5 : 1.0;
                            for (int j = 0; j < n; ++j) {
                                const double centered = (bout[j] - bbar_val[j]) * w * dt;
                                acc[j] += centered;
                                if (k >= tail_start) tail[j] += centered;
                            }
                        });
    });
}

}  // namespace

EmpiricalMeasure sample_invariant(const CoefficientSet& coeffs, std::span<const double> x,
                                  const EmpiricalMeasure& mu, const EstimatorOpts& opts) {
    const auto r = opts.resolve();
    const MeasureView view = mu.view();
    size_t per_replica = 0;
    Vec pool = pooled_samples(coeffs, x, view, r, parallel::resolve_workers(0), &per_replica);
    return EmpiricalMeasure(coeffs.dims().m, std::move(pool));
}

AveragedField estimate_bbar(const CoefficientSet& coeffs, std::span<const double> x,
                            const EmpiricalMeasure& mu, const EstimatorOpts& opts) {
    return estimate_bbar_view(coeffs, x, mu.view(), opts);
}

AveragedField estimate_phi(const CoefficientSet& coeffs, const BbarProvider& bbar,
                           std::span<const double> x, const EmpiricalMeasure& mu,
                           std::span<const double> y, const EstimatorOpts& opts) {
    const auto r = opts.resolve();
    const int n = coeffs.dims().n;
    const MeasureView view = mu.view();
    Vec bb(n);
    bbar.eval(x, view, bb);

    Vec integrals, tails;
    phi_replica_integrals(coeffs, bb, x, view, y, r, integrals, tails);

    AveragedField out;
    mean_and_se_over_replicas(integrals, r.replicas, n, out.value, out.std_error);
    Matrix tail_mean, tail_se;
    mean_and_se_over_replicas(tails, r.replicas, n, tail_mean, tail_se);

    double tail_norm = 0.0;
    bool warn = false;
    for (int j = 0; j < n; ++j) {
        tail_norm += tail_mean(j, 0) * tail_mean(j, 0);
        if (std::fabs(tail_mean(j, 0)) > 3.0 * out.std_error(j, 0)) warn = true;
    }
    out.meta.tail_estimate = std::sqrt(tail_norm);
    out.meta.tail_warning = warn;
    out.meta.burn_in = 0.0;
    out.meta.horizon = r.phi_horizon;
    out.meta.replicas = r.replicas;
    out.meta.step = r.step;
    out.meta.pool_size = static_cast<size_t>(r.replicas);
    return out;
}

AveragedField estimate_dphi_dy(const CoefficientSet& coeffs, const BbarProvider& bbar,
                               std::span<const double> x, const EmpiricalMeasure& mu,
                               std::span<const double> y, const EstimatorOpts& opts) {
    const auto r = opts.resolve();
    const int n = coeffs.dims().n;
    const int m = coeffs.dims().m;
    const MeasureView view = mu.view();
    Vec bb(n);
    bbar.eval(x, view, bb);

    double ynorm = 0.0;
    for (double v : y) ynorm += v * v;
    const double h = opts.fd_step_scale * (1.0 + std::sqrt(ynorm));

    AveragedField out;
    out.value = Matrix(n, m);
    out.std_error = Matrix(n, m);

    Vec yp(y.begin(), y.end()), ym(y.begin(), y.end());
    Vec ip, im, tails, diffs(static_cast<size_t>(r.replicas) * n);
    for (int c = 0; c < m; ++c) {
        yp[c] += h;
        ym[c] -= h;
        // same resolved seed: the +/- runs share their noise streams
        phi_replica_integrals(coeffs, bb, x, view, yp, r, ip, tails);
        phi_replica_integrals(coeffs, bb, x, view, ym, r, im, tails);
        for (size_t i = 0; i < diffs.size(); ++i) diffs[i] = (ip[i] - im[i]) / (2.0 * h);
        Matrix col, col_se;
        mean_and_se_over_replicas(diffs, r.replicas, n, col, col_se);
        for (int j = 0; j < n; ++j) {
            out.value(j, c) = col(j, 0);
            out.std_error(j, c) = col_se(j, 0);
        }
        yp[c] = y[c];
        ym[c] = y[c];
    }
    out.meta.horizon = r.phi_horizon;
    out.meta.replicas = r.replicas;
    out.meta.step = r.step;
    return out;
}

AveragedField estimate_theta(const CoefficientSet& coeffs, const BbarProvider& bbar,
                             std::span<const double> x, const EmpiricalMeasure& mu,
                             const EstimatorOpts& opts) {
    const auto r = opts.resolve();
    const auto& d = coeffs.dims();
    const int n = d.n, m = d.m;
    const MeasureView view = mu.view();

    const EmpiricalMeasure pool = sample_invariant(coeffs, x, mu, opts);
    const int points = std::min<int>(opts.theta_points, static_cast<int>(pool.count()));
    require(points >= 1, "estimate_theta: empty invariant sample pool");

    EstimatorOpts dopts = opts;
    dopts.replicas = opts.theta_phi_replicas;

    Vec gout(static_cast<size_t>(m) * d.d2);
    std::vector<Matrix> terms;
    terms.reserve(points);
    for (int k = 0; k < points; ++k) {
        const size_t idx = (static_cast<size_t>(k) * pool.count()) / points;
        const auto yk = pool.point(idx);
        dopts.seed = rng::fold(opts.seed, 0xA11CEULL + static_cast<std::uint64_t>(k));
        const AveragedField dphi = estimate_dphi_dy(coeffs, bbar, x, mu, yk, dopts);
        coeffs.g(x, view, yk, gout);

        // (dphi * g): n x d2
        Matrix dg(n, d.d2);
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < d.d2; ++c) {
                double s = 0.0;
                for (int j = 0; j < m; ++j)
                    s += dphi.value(i, j) * gout[static_cast<size_t>(j) * d.d2 + c];
                dg(i, c) = s;
            }
        terms.push_back(linalg::matmul(dg, linalg::transpose(dg)));
    }

    Matrix mean(n, n), se(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (const auto& t : terms) s += t(i, j);
            mean(i, j) = s / points;
            double ss = 0.0;
            for (const auto& t : terms) ss += (t(i, j) - mean(i, j)) * (t(i, j) - mean(i, j));
            se(i, j) = points > 1 ? std::sqrt(ss / (points - 1) / points) : 0.0;
        }

    const auto sq = linalg::psd_sqrt(mean);
    AveragedField out;
    out.value = sq.root;
    out.std_error = se;  // standard errors of the pre-root average
    out.meta.replicas = dopts.replicas;
    out.meta.pool_size = pool.count();
    out.meta.step = r.step;
    out.meta.clipped_eigenvalue = sq.clipped;
    return out;
}

void EstimatedBbarProvider::eval(std::span<const double> x, const MeasureView& mu,
                                 std::span<double> out) const {
    EstimatorOpts o = opts_;
    std::uint64_t s = rng::splitmix64(opts_.seed ^ 0xBBA2ULL);
    for (double v : x) s = hash_double(s, v);
    for (int j = 0; j < mu.dim; ++j) s = hash_double(s, mu.mean[j]);
    o.seed = s;
    const AveragedField f = estimate_bbar_view(*coeffs_, x, mu, o);
    for (int j = 0; j < coeffs_->dims().n; ++j) out[j] = f.value(j, 0);
}

void EstimatedThetaProvider::eval(std::span<const double> x, const MeasureView& mu,
                                  std::span<double> out) const {
    EstimatorOpts o = opts_;
    std::uint64_t s = rng::splitmix64(opts_.seed ^ 0x7E7AULL);
    for (double v : x) s = hash_double(s, v);
    for (int j = 0; j < mu.dim; ++j) s = hash_double(s, mu.mean[j]);
    o.seed = s;
    // materialize the view into an owned measure for the public estimator
    Vec pts(mu.points, mu.points + mu.count * static_cast<size_t>(mu.dim));
    const EmpiricalMeasure m(mu.dim, std::move(pts));
    const AveragedField f = estimate_theta(*coeffs_, *bbar_, x, m, o);
    const int n = coeffs_->dims().n;
    for (int i = 0; i < n * n; ++i) out[i] = f.value.data[i];
}

namespace {

class FdDerivativesModel final : public CoefficientSet {
public:
    FdDerivativesModel(std::shared_ptr<const CoefficientSet> inner,
                       std::shared_ptr<const BbarProvider> bbar, double fd_step)
        : CoefficientSet(inner->dims()), inner_(std::move(inner)), bbar_(std::move(bbar)),
          h_(fd_step) {}

    void b(std::span<const double> x, const MeasureView& mu, std::span<const double> y,
           std::span<double> out) const override { inner_->b(x, mu, y, out); }
    void sigma(std::span<const double> x, const MeasureView& mu,
               std::span<double> out) const override { inner_->sigma(x, mu, out); }
    void f(std::span<const double> x, const MeasureView& mu, std::span<const double> y,
           std::span<double> out) const override { inner_->f(x, mu, y, out); }
    void g(std::span<const double> x, const MeasureView& mu, std::span<const double> y,
           std::span<double> out) const override { inner_->g(x, mu, y, out); }
    bool sigma_is_constant() const override { return inner_->sigma_is_constant(); }

    void averaged_drift(std::span<const double> x, const MeasureView& mu,
                        std::span<double> out) const override {
        bbar_->eval(x, mu, out);
    }

    void averaged_drift_dx(std::span<const double> x, const MeasureView& mu,
                           std::span<double> out) const override {
        const int n = dims().n;
        Vec xp(x.begin(), x.end()), xm(x.begin(), x.end()), fp(n), fm(n);
        for (int c = 0; c < n; ++c) {
            const double step = h_ * (1.0 + std::fabs(x[c]));
            xp[c] += step;
            xm[c] -= step;
            bbar_->eval(xp, mu, fp);
            bbar_->eval(xm, mu, fm);
            for (int r = 0; r < n; ++r)
                out[static_cast<size_t>(r) * n + c] = (fp[r] - fm[r]) / (2.0 * step);
            xp[c] = x[c];
            xm[c] = x[c];
        }
    }

    // Lions mean-field term by a directional shift of the whole cloud along
    // the fluctuation field: d/dtau bbar(u, law of X + tau V) at tau = 0.
    void fluctuation_meanfield(const MeasureView& mu, const double* vs,
                               double* out) const override {
        const int n = dims().n;
        const size_t count = mu.count;
        double rms = 0.0;
        for (size_t j = 0; j < count * n; ++j) rms += vs[j] * vs[j];
        rms = std::sqrt(rms / std::max<size_t>(count, 1));
        const double tau = h_ / (1.0 + rms);

        Vec plus(count * n), minus(count * n);
        for (size_t j = 0; j < count * n; ++j) {
            plus[j] = mu.points[j] + tau * vs[j];
            minus[j] = mu.points[j] - tau * vs[j];
        }
        const auto make_view = [n, count](const Vec& pts, Vec& mean_buf, double& m2) {
            for (int j = 0; j < n; ++j)
                mean_buf[j] =
                    linalg::pairwise_sum_strided(pts.data(), count, n, j) / count;
            double acc = 0.0;
            for (size_t i = 0; i < count; ++i)
                for (int j = 0; j < n; ++j) acc += pts[i * n + j] * pts[i * n + j];
            m2 = acc / count;
            return MeasureView{n, count, pts.data(), mean_buf.data(), m2};
        };
        Vec mean_p(n), mean_m(n);
        double m2p = 0.0, m2m = 0.0;
        const MeasureView vp = make_view(plus, mean_p, m2p);
        const MeasureView vm = make_view(minus, mean_m, m2m);

        Vec fp(n), fm(n);
        for (size_t i = 0; i < count; ++i) {
            bbar_->eval(mu.point(i), vp, fp);
            bbar_->eval(mu.point(i), vm, fm);
            for (int r = 0; r < n; ++r) out[i * n + r] = (fp[r] - fm[r]) / (2.0 * tau);
        }
    }

private:
    std::shared_ptr<const CoefficientSet> inner_;
    std::shared_ptr<const BbarProvider> bbar_;
    double h_;
};

}  // namespace

std::shared_ptr<const CoefficientSet> with_fd_averaged_derivatives(
    std::shared_ptr<const CoefficientSet> coeffs, std::shared_ptr<const BbarProvider> bbar,
    double fd_step) {
    return std::make_shared<FdDerivativesModel>(std::move(coeffs), std::move(bbar), fd_step);
}

}  // namespace mvscale::averaging
