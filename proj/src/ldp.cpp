#include "mvscale/ldp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "mvscale/linalg.hpp"

namespace mvscale::ldp {

using measure::MeasureView;

namespace {

// Dirac measure view over a scratch point.
struct DiracView {
    Vec point;
    double m2 = 0.0;

    explicit DiracView(int dim) : point(dim, 0.0) {}
    void set(std::span<const double> p) {
        double acc = 0.0;
        for (size_t j = 0; j < point.size(); ++j) {
            point[j] = p[j];
            acc += p[j] * p[j];
        }
        m2 = acc;
    }
    MeasureView view() const {
        return MeasureView{static_cast<int>(point.size()), 1, point.data(), point.data(), m2};
    }
};

// drift of the skeleton at (t, x): bbar(x, dirac(base(t))) + sigma * u. The
// control is piecewise constant, so it is looked up at the step midpoint
// (t_mid) to keep every RK4 stage of a step inside one control interval.
struct SkeletonField {
    const CoefficientSet& coeffs;
    const BbarProvider& bbar;
    const SolvedPath* base = nullptr;  // null: self-consistent Dirac at x
    const Control* control = nullptr;

    mutable DiracView dirac;
    mutable Vec bb, sg, basept;

    SkeletonField(const CoefficientSet& c, const BbarProvider& b, const SolvedPath* bp,
                  const Control* ctl)
        : coeffs(c), bbar(b), base(bp), control(ctl), dirac(c.dims().n), bb(c.dims().n),
          sg(static_cast<size_t>(c.dims().n) * c.dims().d1), basept(c.dims().n) {}

    void operator()(double t, double t_mid, std::span<const double> x,
                    std::span<double> out) const {
        const int n = coeffs.dims().n;
        const int d1 = coeffs.dims().d1;
        if (base) {
            base->eval(t, basept);
            dirac.set(basept);
        } else {
            dirac.set(x);
        }
        const MeasureView mu = dirac.view();
        bbar.eval(x, mu, bb);
        for (int j = 0; j < n; ++j) out[j] = bb[j];
        if (control) {
            const auto hv = control->values_at_interval(control->interval_of(t_mid));
            coeffs.sigma(x, mu, sg);
            for (int j = 0; j < n; ++j) {
                double s = 0.0;
                for (int c = 0; c < d1; ++c) s += sg[static_cast<size_t>(j) * d1 + c] * hv[c];
                out[j] += s;
            }
        }
    }
};

// Classic fixed-step RK4 storing every node.
template <class Field>
SolvedPath rk4_solve(const Field& field, std::span<const double> x0, double horizon, int steps) {
    const int n = static_cast<int>(x0.size());
    SolvedPath path;
    path.dim = n;
    path.horizon = horizon;
    path.states.assign(static_cast<size_t>(steps + 1) * n, 0.0);
    std::copy(x0.begin(), x0.end(), path.states.begin());

    const double h = horizon / steps;
    Vec x(x0.begin(), x0.end()), k1(n), k2(n), k3(n), k4(n), tmp(n);
    for (int k = 0; k < steps; ++k) {
        const double t = k * h;
        const double tm = t + 0.5 * h;
        field(t, tm, x, k1);
        for (int j = 0; j < n; ++j) tmp[j] = x[j] + 0.5 * h * k1[j];
        field(t + 0.5 * h, tm, tmp, k2);
        for (int j = 0; j < n; ++j) tmp[j] = x[j] + 0.5 * h * k2[j];
        field(t + 0.5 * h, tm, tmp, k3);
        for (int j = 0; j < n; ++j) tmp[j] = x[j] + h * k3[j];
        field(t + h, tm, tmp, k4);
        for (int j = 0; j < n; ++j)
            x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        for (int j = 0; j < n; ++j) {
            if (!std::isfinite(x[j]))
                throw DivergenceError("skeleton state not finite at t=" + std::to_string(t + h),
                                      t + h);
            path.states[static_cast<size_t>(k + 1) * n + j] = x[j];
        }
    }
    return path;
}

int aligned_steps(const Control& control, double horizon, double step_hint) {
    const double hint = step_hint > 0 ? step_hint : 1e-3 * horizon;
    const double ctl_dt = control.dt();
    const int substeps = std::max(1, static_cast<int>(std::ceil(ctl_dt / hint)));
    const int intervals_used =
        std::max(1, static_cast<int>(std::llround(horizon / ctl_dt)));
    return intervals_used * substeps;
}

// Jacobian of the averaged drift in x at frozen measure; analytic when the
// model provides it, otherwise central differences of the provider.
void averaged_jacobian(const CoefficientSet& coeffs, const BbarProvider& bbar,
                       std::span<const double> x, const MeasureView& mu, Vec& out) {
    const int n = coeffs.dims().n;
    if (coeffs.has_analytic_oracle()) {
        coeffs.averaged_drift_dx(x, mu, out);
        return;
    }
    Vec xp(x.begin(), x.end()), xm(x.begin(), x.end()), fp(n), fm(n);
    for (int c = 0; c < n; ++c) {
        const double step = 1e-6 * (1.0 + std::fabs(x[c]));
        xp[c] += step;
        xm[c] -= step;
        bbar.eval(xp, mu, fp);
        bbar.eval(xm, mu, fm);
        for (int r = 0; r < n; ++r) out[static_cast<size_t>(r) * n + c] = (fp[r] - fm[r]) / (2.0 * step);
        xp[c] = x[c];
        xm[c] = x[c];
    }
}

}  // namespace

SolvedPath solve_averaged_ode(const CoefficientSet& coeffs, const BbarProvider& bbar,
                              std::span<const double> x0, double horizon, double step) {
    const int steps = std::max(1, static_cast<int>(std::llround(horizon / step)));
    const SkeletonField field(coeffs, bbar, nullptr, nullptr);
    return rk4_solve(field, x0, horizon, steps);
}

SolvedPath solve_skeleton(const CoefficientSet& coeffs, const BbarProvider& bbar,
                          std::span<const double> x0, const Control& control,
                          const SolvedPath& base, double step_hint) {
    require(control.channels == coeffs.dims().d1 + coeffs.dims().d2,
            "solve_skeleton: control channel count must equal d1 + d2");
    require(base.dim == coeffs.dims().n, "solve_skeleton: base path dimension mismatch");
    const int steps = aligned_steps(control, control.horizon, step_hint);
    const SkeletonField field(coeffs, bbar, &base, &control);
    return rk4_solve(field, x0, control.horizon, steps);
}

AdjointResult adjoint_gradient(const CoefficientSet& coeffs, const BbarProvider& bbar,
                               std::span<const double> x0, const Control& control,
                               std::span<const double> target, double rho,
                               const SolvedPath& base) {
    const int n = coeffs.dims().n;
    const int d1 = coeffs.dims().d1;
    const int channels = control.channels;
    const double T = control.horizon;
    const int steps = aligned_steps(control, T, -1.0);
    const int substeps = steps / control.intervals;
    const double h = T / steps;

    const SkeletonField field(coeffs, bbar, &base, &control);
    const SolvedPath fwd = rk4_solve(field, x0, T, steps);

    AdjointResult res;
    res.endpoint.assign(fwd.endpoint().begin(), fwd.endpoint().end());
    double r2 = 0.0;
    for (int j = 0; j < n; ++j) {
        const double d = res.endpoint[j] - target[j];
        r2 += d * d;
    }
    res.residual = std::sqrt(r2);
    res.energy = control.energy();
    res.objective = res.energy + 0.5 * rho * r2;

    // backward costate: pdot = -A(t)^T p, p(T) = rho (x(T) - target)
    Vec p(n);
    for (int j = 0; j < n; ++j) p[j] = rho * (res.endpoint[j] - target[j]);

    res.gradient.assign(static_cast<size_t>(control.intervals) * channels, 0.0);
    // energy part: dE/dhdot = hdot * dt over every channel
    for (int k = 0; k < control.intervals; ++k) {
        const auto hv = control.values_at_interval(k);
        for (int c = 0; c < channels; ++c)
            res.gradient[static_cast<size_t>(k) * channels + c] = hv[c] * control.dt();
    }

    DiracView dirac(n);
    Vec basept(n), xc(n), jac(static_cast<size_t>(n) * n), sg(static_cast<size_t>(n) * d1),
        integrand(d1), integrand_prev(d1), phalf(n), k1(n), k2(n), k3(n), k4(n), tmp(n);

    const auto eval_A = [&](double t, Vec& out_jac) {
        fwd.eval(t, xc);
        base.eval(t, basept);
        dirac.set(basept);
        const MeasureView mu = dirac.view();
        averaged_jacobian(coeffs, bbar, xc, mu, out_jac);
        if (!coeffs.sigma_is_constant()) {
            // add d(sigma u)/dx columns via directional derivatives
            const auto hv = control.values_at_interval(control.interval_of(std::min(t, T - 1e-12)));
            Vec dir(n, 0.0), sdx(static_cast<size_t>(n) * d1);
            for (int c = 0; c < n; ++c) {
                dir[c] = 1.0;
                coeffs.sigma_dx(xc, mu, dir, sdx);
                for (int r = 0; r < n; ++r) {
                    double s = 0.0;
                    for (int cc = 0; cc < d1; ++cc)
                        s += sdx[static_cast<size_t>(r) * d1 + cc] * hv[cc];
                    out_jac[static_cast<size_t>(r) * n + c] += s;
                }
                dir[c] = 0.0;
            }
        }
    };

    const auto rhs = [&](double t, const Vec& pv, Vec& out) {
        eval_A(t, jac);
        for (int r = 0; r < n; ++r) {
            double s = 0.0;
            for (int c = 0; c < n; ++c) s += jac[static_cast<size_t>(c) * n + r] * pv[c];
            out[r] = -s;
        }
    };

    // integrand of the constraint gradient at a node: (sigma^T p) on the
    // first d1 channels
    const auto sigma_t_p = [&](double t, const Vec& pv, Vec& out) {
        fwd.eval(t, xc);
        base.eval(t, basept);
        dirac.set(basept);
        const MeasureView mu = dirac.view();
        coeffs.sigma(xc, mu, sg);
        for (int c = 0; c < d1; ++c) {
            double s = 0.0;
            for (int r = 0; r < n; ++r) s += sg[static_cast<size_t>(r) * d1 + c] * pv[r];
            out[c] = s;
        }
    };

    sigma_t_p(T, p, integrand_prev);
    for (int k = steps - 1; k >= 0; --k) {
        const double t1 = (k + 1) * h;
        // RK4 for the backward equation, integrating in -t
        rhs(t1, p, k1);
        for (int j = 0; j < n; ++j) tmp[j] = p[j] - 0.5 * h * k1[j];
        rhs(t1 - 0.5 * h, tmp, k2);
        for (int j = 0; j < n; ++j) tmp[j] = p[j] - 0.5 * h * k2[j];
        rhs(t1 - 0.5 * h, tmp, k3);
        for (int j = 0; j < n; ++j) tmp[j] = p[j] - h * k3[j];
        rhs(t1 - h, tmp, k4);
        for (int j = 0; j < n; ++j)
            p[j] -= h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);

        sigma_t_p(k * h, p, integrand);
        const int interval = k / substeps;
        double* grad_k = &res.gradient[static_cast<size_t>(interval) * channels];
        for (int c = 0; c < d1; ++c)
            grad_k[c] += 0.5 * h * (integrand[c] + integrand_prev[c]);
        integrand_prev = integrand;
    }
    return res;
}

namespace {

// Endpoint sensitivity probe: max over control coordinates of
// |d x_i(T) / d hdot| for each terminal direction e_i.
double endpoint_sensitivity(const CoefficientSet& coeffs, const BbarProvider& bbar,
                            std::span<const double> x0, const Control& control,
                            const SolvedPath& base) {
    const int n = coeffs.dims().n;
    double max_abs = 0.0;
    Vec target(n, 0.0);
    for (int i = 0; i < n; ++i) {
        // gradient of <e_i, x(T)>: run the adjoint with rho chosen so that
        // p(T) = e_i, i.e. rho * (x(T) - target) = e_i
        // Instead solve directly: p(T) = e_i via rho=1 and target = x(T) - e_i.
        const SkeletonField field(coeffs, bbar, &base, &control);
        const int steps = aligned_steps(control, control.horizon, -1.0);
        const SolvedPath fwd = rk4_solve(field, x0, control.horizon, steps);
        Vec t2(fwd.endpoint().begin(), fwd.endpoint().end());
        t2[i] -= 1.0;
        const AdjointResult r = adjoint_gradient(coeffs, bbar, x0, control, t2, 1.0, base);
        for (int k = 0; k < control.intervals; ++k) {
            const auto hv = control.values_at_interval(k);
            for (int c = 0; c < control.channels; ++c) {
                const double constraint_part =
                    r.gradient[static_cast<size_t>(k) * control.channels + c] -
                    hv[c] * control.dt();
                max_abs = std::max(max_abs, std::fabs(constraint_part));
            }
        }
    }
    return max_abs;
}

struct LbfgsState {
    int mem = 8;
    std::vector<Vec> s, y;
    std::vector<double> rho;

    void push(const Vec& si, const Vec& yi) {
        double d = 0.0;
        for (size_t j = 0; j < si.size(); ++j) d += si[j] * yi[j];
        if (d <= 1e-18) return;  // skip non-curvature pairs
        s.push_back(si);
        y.push_back(yi);
        rho.push_back(1.0 / d);
        if (static_cast<int>(s.size()) > mem) {
            s.erase(s.begin());
            y.erase(y.begin());
            rho.erase(rho.begin());
        }
    }

    // two-loop recursion: direction = -H g
    Vec direction(const Vec& g) const {
        Vec q = g;
        const int k = static_cast<int>(s.size());
        Vec alpha(k, 0.0);
        for (int i = k - 1; i >= 0; --i) {
            double a = 0.0;
            for (size_t j = 0; j < q.size(); ++j) a += s[i][j] * q[j];
            a *= rho[i];
            alpha[i] = a;
            for (size_t j = 0; j < q.size(); ++j) q[j] -= a * y[i][j];
        }
        double scale = 1.0;
        if (k > 0) {
            double yy = 0.0, sy = 0.0;
            for (size_t j = 0; j < q.size(); ++j) {
                yy += y[k - 1][j] * y[k - 1][j];
                sy += s[k - 1][j] * y[k - 1][j];
            }
            if (yy > 0) scale = sy / yy;
        }
        for (auto& v : q) v *= scale;
        for (int i = 0; i < k; ++i) {
            double b = 0.0;
            for (size_t j = 0; j < q.size(); ++j) b += y[i][j] * q[j];
            b *= rho[i];
            for (size_t j = 0; j < q.size(); ++j) q[j] += s[i][j] * (alpha[i] - b);
        }
        for (auto& v : q) v = -v;
        return q;
    }
};

}  // namespace

std::string RateResult::trace_text() const {
    std::ostringstream os;
    os << "rho,iterations,grad_norm,residual,energy\n";
    for (const auto& s : trace)
        os << s.rho << ',' << s.iterations << ',' << s.grad_norm << ',' << s.residual << ','
           << s.energy << '\n';
    return os.str();
}

RateResult rate_function(const CoefficientSet& coeffs, const BbarProvider& bbar,
                         std::span<const double> x0, std::span<const double> target,
                         const RateOptions& opts) {
    const auto& dims = coeffs.dims();
    const int n = dims.n;
    require(static_cast<int>(target.size()) == n, "rate_function: target dimension mismatch");
    require(opts.grid_k >= 16, "rate_function: control grid needs at least 16 intervals");

    const double T = opts.horizon;
    const double tol = opts.tol > 0 ? opts.tol : 1e-4 * (1.0 + linalg::norm2(target));
    const double base_step = opts.base_step > 0 ? opts.base_step : 1e-4 * T;

    RateResult result;
    result.target.assign(target.begin(), target.end());

    const SolvedPath base = solve_averaged_ode(coeffs, bbar, x0, T, base_step);
    Control control = Control::zeros(T, opts.grid_k, dims.d1 + dims.d2);

    // free endpoint: zero control already meets the target
    {
        const SolvedPath free_path = solve_skeleton(coeffs, bbar, x0, control, base);
        double r2 = 0.0;
        for (int j = 0; j < n; ++j) {
            const double d = free_path.endpoint()[j] - target[j];
            r2 += d * d;
        }
        if (std::sqrt(r2) < tol) {
            result.status = RateStatus::converged;
            result.rate = 0.0;
            result.control = control;
            result.residual = std::sqrt(r2);
            return result;
        }
    }

    if (endpoint_sensitivity(coeffs, bbar, x0, control, base) < 1e-12) {
        result.status = RateStatus::infeasible;
        result.rate = std::numeric_limits<double>::infinity();
        result.control = control;
        result.residual = std::numeric_limits<double>::infinity();
        return result;
    }

    for (double rho : opts.rho_schedule) {
        AdjointResult cur = adjoint_gradient(coeffs, bbar, x0, control, target, rho, base);
        LbfgsState lbfgs;
        int iter = 0;
        double gnorm = linalg::norm2(cur.gradient);
        while (iter < opts.max_iter && gnorm > 1e-9 * (1.0 + std::fabs(cur.objective))) {
            const Vec dir = lbfgs.direction(cur.gradient);
            double slope = 0.0;
            for (size_t j = 0; j < dir.size(); ++j) slope += dir[j] * cur.gradient[j];
            if (slope >= 0) {  // not a descent direction; restart memory
                lbfgs = LbfgsState();
                continue;
            }
            double alpha = 1.0;
            Control trial = control;
            AdjointResult next;
            bool accepted = false;
            for (int bt = 0; bt < 50; ++bt) {
                for (size_t j = 0; j < dir.size(); ++j)
                    trial.hdot[j] = control.hdot[j] + alpha * dir[j];
                next = adjoint_gradient(coeffs, bbar, x0, trial, target, rho, base);
                if (next.objective <= cur.objective + 1e-4 * alpha * slope) {
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if (!accepted) break;
            Vec s(dir.size()), yv(dir.size());
            for (size_t j = 0; j < dir.size(); ++j) {
                s[j] = trial.hdot[j] - control.hdot[j];
                yv[j] = next.gradient[j] - cur.gradient[j];
            }
            lbfgs.push(s, yv);
            control = trial;
            cur = next;
            gnorm = linalg::norm2(cur.gradient);
            ++iter;
        }
        result.trace.push_back({rho, iter, gnorm, cur.residual, cur.energy});
        result.residual = cur.residual;
        result.rate = cur.energy;
    }

    result.control = control;
    if (result.residual >= tol)
        throw OptimizationError(
            "rate_function did not reach the endpoint tolerance (residual " +
                std::to_string(result.residual) + " >= " + std::to_string(tol) + ")",
            result.trace_text());
    result.status = RateStatus::converged;
    return result;
}

ConvergenceResult controlled_convergence_experiment(
    const CoefficientSet& coeffs, const Control& control, const std::vector<double>& delta_list,
    const std::function<double(double)>& eps_rule, const sim::SimConfig& cfg,
    const BbarProvider& bbar, std::span<const double> x0, std::span<const double> y0) {
    require(delta_list.size() >= 2, "controlled_convergence_experiment: need >= 2 deltas");
    for (size_t i = 1; i < delta_list.size(); ++i)
        require(delta_list[i] < delta_list[i - 1],
                "controlled_convergence_experiment: delta_list must be strictly decreasing");

    const double T = cfg.horizon;
    const SolvedPath base = solve_averaged_ode(coeffs, bbar, x0, T, 1e-4 * T);
    const SolvedPath skeleton = solve_skeleton(coeffs, bbar, x0, control, base);

    ConvergenceResult out;
    for (double delta : delta_list) {
        sim::SimConfig c = cfg;
        c.delta = delta;
        c.epsilon = eps_rule(delta);
        const sim::PathRecord rec =
            sim::simulate_controlled_vs_reference(coeffs, c, control, skeleton, x0, y0);
        ConvergenceRow row;
        row.delta = delta;
        row.epsilon = c.epsilon;
        const int M = rec.replicas;
        row.distance = linalg::pairwise_sum(rec.sup_ref_dist) / M;
        double ss = 0.0;
        for (double v : rec.sup_ref_dist) ss += (v - row.distance) * (v - row.distance);
        row.se = M > 1 ? std::sqrt(ss / (M - 1) / M) : 0.0;
        out.rows.push_back(row);
    }

    for (size_t i = 1; i < out.rows.size(); ++i) {
        const auto& a = out.rows[i - 1];
        const auto& b = out.rows[i];
        const double slack = std::sqrt(a.se * a.se + b.se * b.se);
        if (!(b.distance < a.distance + slack)) out.monotone = false;
    }
    return out;
}

RareProbeResult naive_rare_probe(const CoefficientSet& coeffs, const sim::SimConfig& cfg,
                                 double lo, double hi, const std::vector<double>& delta_list,
                                 const std::function<double(double)>& eps_rule,
                                 std::span<const double> x0, std::span<const double> y0,
                                 double rate_reference) {
    require(coeffs.dims().n == 1, "naive_rare_probe: interval events need a 1-d slow state");
    RareProbeResult out;
    out.rate_reference = rate_reference;
    for (double delta : delta_list) {
        sim::SimConfig c = cfg;
        c.delta = delta;
        c.epsilon = eps_rule(delta);
        c.record_endpoint = true;
        const sim::PathRecord rec = sim::simulate_smallnoise(coeffs, c, x0, y0);
        size_t hits = 0;
        const size_t total = rec.endpoint_x.size();
        for (double v : rec.endpoint_x)
            if (v >= lo && v <= hi) ++hits;
        RareProbeRow row;
        row.delta = delta;
        if (hits == 0) {
            row.flagged = true;
            row.p_hat = 3.0 / static_cast<double>(total);  // reported as an upper bound
        } else {
            row.p_hat = static_cast<double>(hits) / static_cast<double>(total);
        }
        row.neg_delta_log_p = -delta * std::log(row.p_hat);
        out.rows.push_back(row);
    }
    return out;
}

}  // namespace mvscale::ldp
