#include "mvscale/model.hpp"

#include <cmath>
#include <limits>

#include "mvscale/rng.hpp"

namespace mvscale::model {

void CoefficientSet::fluctuation_meanfield(const MeasureView& mu, const double* vs,
                                           double* out) const {
    const int n = dims().n;
    const size_t count = mu.count;
    Vec kernel(static_cast<size_t>(n) * n);
    for (size_t i = 0; i < count; ++i) {
        double* oi = out + i * n;
        for (int r = 0; r < n; ++r) oi[r] = 0.0;
        for (size_t j = 0; j < count; ++j) {
            averaged_drift_dmu(mu.point(i), mu, mu.point(j), kernel);
            for (int r = 0; r < n; ++r) {
                double s = 0.0;
                for (int c = 0; c < n; ++c)
                    s += kernel[static_cast<size_t>(r) * n + c] * vs[j * n + c];
                oi[r] += s;
            }
        }
        const double inv = 1.0 / static_cast<double>(count ? count : 1);
        for (int r = 0; r < n; ++r) oi[r] *= inv;
    }
}

void CoefficientSet::fluctuation_meanfield_sigma(const MeasureView& mu, const double* vs,
                                                 double* out) const {
    const int n = dims().n;
    const int d1 = dims().d1;
    const size_t count = mu.count;
    const size_t block = static_cast<size_t>(n) * d1;
    Vec contrib(block);
    for (size_t i = 0; i < count; ++i) {
        double* oi = out + i * block;
        for (size_t r = 0; r < block; ++r) oi[r] = 0.0;
        for (size_t j = 0; j < count; ++j) {
            sigma_dmu(mu.point(i), mu, mu.point(j), {vs + j * n, static_cast<size_t>(n)},
                      contrib);
            for (size_t r = 0; r < block; ++r) oi[r] += contrib[r];
        }
        const double inv = 1.0 / static_cast<double>(count ? count : 1);
        for (size_t r = 0; r < block; ++r) oi[r] *= inv;
    }
}

namespace {

class LinearModel final : public CoefficientSet {
public:
    explicit LinearModel(const LinearModelParams& p)
        : CoefficientSet({1, 1, 1, 1}), p_(p) {}

    void b(std::span<const double> x, const MeasureView& mu, std::span<const double> y,
           std::span<double> out) const override {
        out[0] = p_.a1 * x[0] + p_.a2 * mu.mean[0] + p_.a3 * y[0];
    }
    void sigma(std::span<const double>, const MeasureView&, std::span<double> out) const override {
        out[0] = p_.sigma0;
    }
    void f(std::span<const double> x, const MeasureView& mu, std::span<const double> y,
           std::span<double> out) const override {
        out[0] = -y[0] + p_.c1 * x[0] + p_.c2 * mu.mean[0];
    }
    void g(std::span<const double>, const MeasureView&, std::span<const double>,
           std::span<double> out) const override {
        out[0] = p_.g0;
    }

    bool has_analytic_oracle() const override { return true; }

    void averaged_drift(std::span<const double> x, const MeasureView& mu,
                        std::span<double> out) const override {
        out[0] = oracle_bbar(p_, x[0], mu.mean[0]);
    }
    void averaged_drift_dx(std::span<const double>, const MeasureView&,
                           std::span<double> out) const override {
        out[0] = p_.a1 + p_.a3 * p_.c1;
    }
    void averaged_drift_dmu(std::span<const double>, const MeasureView&,
                            std::span<const double>, std::span<double> out) const override {
        out[0] = p_.a2 + p_.a3 * p_.c2;
    }
    // kernel is constant, so every row is its action on the fluctuation mean
    void fluctuation_meanfield(const MeasureView& mu, const double* vs,
                               double* out) const override {
        const size_t count = mu.count;
        double s = 0.0;
        for (size_t j = 0; j < count; ++j) s += vs[j];
        const double v = (p_.a2 + p_.a3 * p_.c2) * s / static_cast<double>(count ? count : 1);
        for (size_t i = 0; i < count; ++i) out[i] = v;
    }

private:
    LinearModelParams p_;
};

class ConvolutionModel final : public CoefficientSet {
public:
    explicit ConvolutionModel(const ConvolutionModelParams& p)
        : CoefficientSet({1, 1, 1, 1}), p_(p) {}

    void b(std::span<const double> x, const MeasureView& mu, std::span<const double> y,
           std::span<double> out) const override {
        out[0] = p_.ab * conv_mean(mu, x[0], [](double u) { return std::tanh(u); }) +
                 p_.by * std::tanh(y[0]);
    }
    void sigma(std::span<const double>, const MeasureView&, std::span<double> out) const override {
        out[0] = p_.sigma0;
    }
    void f(std::span<const double> x, const MeasureView& mu, std::span<const double> y,
           std::span<double> out) const override {
        out[0] = -p_.kappa * y[0] + p_.cf * conv_mean(mu, x[0], [](double u) { return std::sin(u); });
    }
    void g(std::span<const double>, const MeasureView&, std::span<const double> y,
           std::span<double> out) const override {
        out[0] = p_.g0 * (1.0 + p_.gy * std::tanh(y[0]));
    }

private:
    template <class F>
    static double conv_mean(const MeasureView& mu, double x, F base) {
        if (mu.count == 0) return base(x + mu.mean[0]);
        double s = 0.0;
        for (size_t i = 0; i < mu.count; ++i) s += base(x + mu.points[i]);
        return s / static_cast<double>(mu.count);
    }

    ConvolutionModelParams p_;
};

}  // namespace

std::shared_ptr<const CoefficientSet> linear_model(const LinearModelParams& p) {
    return std::make_shared<LinearModel>(p);
}

std::shared_ptr<const CoefficientSet> convolution_model(const ConvolutionModelParams& p) {
    return std::make_shared<ConvolutionModel>(p);
}

double oracle_bbar(const LinearModelParams& p, double x, double mean) {
    return (p.a1 + p.a3 * p.c1) * x + (p.a2 + p.a3 * p.c2) * mean;
}

double oracle_bbar_dx(const LinearModelParams& p) { return p.a1 + p.a3 * p.c1; }

double oracle_bbar_dmu(const LinearModelParams& p) { return p.a2 + p.a3 * p.c2; }

std::pair<double, double> oracle_frozen_invariant(const LinearModelParams& p, double x,
                                                  double mean) {
    return {p.c1 * x + p.c2 * mean, 0.5 * p.g0 * p.g0};
}

double oracle_phi(const LinearModelParams& p, double x, double mean, double y) {
    return p.a3 * (y - p.c1 * x - p.c2 * mean);
}

double oracle_theta(const LinearModelParams& p) { return std::fabs(p.a3 * p.g0); }

double oracle_clt_variance(const LinearModelParams& p, double t) {
    const double theta = oracle_theta(p);
    const double lam = p.a1 + p.a3 * p.c1;
    if (std::fabs(lam) < 1e-8) {
        // series of (e^{2 lam t} - 1) / (2 lam) around lam = 0
        return theta * theta * t * (1.0 + lam * t * (1.0 + 2.0 * lam * t / 3.0));
    }
    return theta * theta * std::expm1(2.0 * lam * t) / (2.0 * lam);
}

double dissipativity_probe(const CoefficientSet& coeffs, int sample_count, std::uint64_t seed,
                           const ProbeOptions& opts) {
    require(sample_count >= 100, "dissipativity_probe: sample_count must be >= 100");
    const auto& d = coeffs.dims();
    rng::NoiseSource noise(seed);

    const auto box = [&](std::uint64_t s, std::uint64_t c) {
        return opts.box_halfwidth * (2.0 * noise.uniform({0, 0, rng::kChanProbe, s, c}) - 1.0);
    };

    Vec x(d.n), y1(d.m), y2(d.m), f1(d.m), f2(d.m);
    Vec g1(static_cast<size_t>(d.m) * d.d2), g2(static_cast<size_t>(d.m) * d.d2);
    Vec cloud(static_cast<size_t>(opts.measure_points) * d.n);

    double inf = std::numeric_limits<double>::infinity();
    for (int s = 0; s < sample_count; ++s) {
        std::uint64_t c = 0;
        const auto step = static_cast<std::uint64_t>(s);
        for (int i = 0; i < d.n; ++i) x[i] = box(step, c++);
        for (auto& v : cloud) v = box(step, c++);
        for (int i = 0; i < d.m; ++i) y1[i] = box(step, c++);
        for (int i = 0; i < d.m; ++i) y2[i] = box(step, c++);

        double dy2 = 0.0;
        for (int i = 0; i < d.m; ++i) {
            const double dy = y1[i] - y2[i];
            dy2 += dy * dy;
        }
        if (dy2 < 1e-16) continue;

        const measure::EmpiricalMeasure mu(d.n, cloud);
        const MeasureView view = mu.view();
        coeffs.f(x, view, y1, f1);
        coeffs.f(x, view, y2, f2);
        coeffs.g(x, view, y1, g1);
        coeffs.g(x, view, y2, g2);

        double inner = 0.0;
        for (int i = 0; i < d.m; ++i) inner += (f1[i] - f2[i]) * (y1[i] - y2[i]);
        double gdiff = 0.0;
        for (size_t i = 0; i < g1.size(); ++i) {
            const double dg = g1[i] - g2[i];
            gdiff += dg * dg;
        }
        const double val = -(2.0 * inner + 5.0 * gdiff) / dy2;
        if (std::isnan(val))
            throw ModelError("dissipativity_probe: coefficient returned NaN");
        inf = std::min(inf, val);
    }
    return inf;
}

}  // namespace mvscale::model
