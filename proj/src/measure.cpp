#include "mvscale/measure.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mvscale/linalg.hpp"
#include "mvscale/rng.hpp"

namespace mvscale::measure {

EmpiricalMeasure::EmpiricalMeasure(int dim, Vec points)
    : dim_(dim), points_(std::move(points)) {
    require(dim_ >= 1, "EmpiricalMeasure: dimension must be >= 1");
    require(!points_.empty() && points_.size() % static_cast<size_t>(dim_) == 0,
            "EmpiricalMeasure: point buffer size is not a multiple of the dimension");
    count_ = points_.size() / static_cast<size_t>(dim_);
    weights_.assign(count_, 1.0 / static_cast<double>(count_));
    uniform_ = true;
    validate_and_finalize();
}

EmpiricalMeasure::EmpiricalMeasure(int dim, Vec points, Vec weights)
    : dim_(dim), points_(std::move(points)), weights_(std::move(weights)) {
    require(dim_ >= 1, "EmpiricalMeasure: dimension must be >= 1");
    require(!points_.empty() && points_.size() % static_cast<size_t>(dim_) == 0,
            "EmpiricalMeasure: point buffer size is not a multiple of the dimension");
    count_ = points_.size() / static_cast<size_t>(dim_);
    require(weights_.size() == count_, "EmpiricalMeasure: weight count differs from point count");
    uniform_ = false;
    validate_and_finalize();
}

void EmpiricalMeasure::validate_and_finalize() {
    double wsum = 0.0;
    for (double w : weights_) {
        require(std::isfinite(w) && w >= 0.0, "EmpiricalMeasure: weights must be nonnegative");
        wsum += w;
    }
    require(std::fabs(wsum - 1.0) <= 1e-12, "EmpiricalMeasure: weights must sum to 1 (within 1e-12)");

    mean_.assign(dim_, 0.0);
    second_moment_ = 0.0;
    for (size_t i = 0; i < count_; ++i) {
        double nrm2 = 0.0;
        for (int j = 0; j < dim_; ++j) {
            const double v = points_[i * dim_ + j];
            require(std::isfinite(v), "EmpiricalMeasure: non-finite point coordinate");
            mean_[j] += weights_[i] * v;
            nrm2 += v * v;
        }
        second_moment_ += weights_[i] * nrm2;
    }
}

EmpiricalMeasure EmpiricalMeasure::dirac(Vec point) {
    const int d = static_cast<int>(point.size());
    return EmpiricalMeasure(d, std::move(point));
}

EmpiricalMeasure EmpiricalMeasure::from_samples_1d(Vec samples) {
    return EmpiricalMeasure(1, std::move(samples));
}

EmpiricalMeasure EmpiricalMeasure::translated(std::span<const double> c) const {
    require(static_cast<int>(c.size()) == dim_, "translated: shift dimension mismatch");
    Vec pts = points_;
    for (size_t i = 0; i < count_; ++i)
        for (int j = 0; j < dim_; ++j) pts[i * dim_ + j] += c[j];
    return uniform_ ? EmpiricalMeasure(dim_, std::move(pts))
                    : EmpiricalMeasure(dim_, std::move(pts), weights_);
}

Vec moment(const EmpiricalMeasure& mu, int k) {
    require(k >= 1 && k <= 8, "moment: order must be in [1, 8]");
    Vec out(mu.dim(), 0.0);
    for (size_t i = 0; i < mu.count(); ++i) {
        const auto p = mu.point(i);
        const double w = mu.weight(i);
        for (int j = 0; j < mu.dim(); ++j) {
            double pw = p[j];
            for (int e = 1; e < k; ++e) pw *= p[j];
            out[j] += w * pw;
        }
    }
    return out;
}

namespace {

struct SortedSample {
    Vec values;
    Vec weights;
};

SortedSample sort_weighted(std::span<const double> xs, std::span<const double> ws) {
    std::vector<size_t> idx(xs.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return xs[a] < xs[b]; });
    SortedSample out;
    out.values.reserve(xs.size());
    out.weights.reserve(xs.size());
    for (size_t i : idx) {
        out.values.push_back(xs[i]);
        out.weights.push_back(ws[i]);
    }
    return out;
}

}  // namespace

double w2_1d(std::span<const double> xs, std::span<const double> wxs,
             std::span<const double> ys, std::span<const double> wys) {
    const SortedSample a = sort_weighted(xs, wxs);
    const SortedSample b = sort_weighted(ys, wys);

    // Walk the merged quantile grid of both CDFs.
    size_t i = 0, j = 0;
    double qa = a.weights[0], qb = b.weights[0], q = 0.0, acc = 0.0;
    while (i < a.values.size() && j < b.values.size()) {
        const double qn = std::min(qa, qb);
        const double d = a.values[i] - b.values[j];
        acc += d * d * (qn - q);
        q = qn;
        if (qa <= qn + 1e-18 && i + 1 <= a.values.size()) {
            ++i;
            if (i < a.values.size()) qa += a.weights[i];
            else qa = 2.0;
        }
        if (qb <= qn + 1e-18 && j + 1 <= b.values.size()) {
            ++j;
            if (j < b.values.size()) qb += b.weights[j];
            else qb = 2.0;
        }
    }
    return std::sqrt(std::max(acc, 0.0));
}

namespace {

double w2_1d_equal_uniform(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
    Vec a = mu.flat_points();
    Vec b = nu.flat_points();
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(a.size()));
}

double sliced_w2(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, const W2Options& opts) {
    const int d = mu.dim();
    rng::NoiseSource noise(opts.seed);
    Vec dir(d);
    Vec pa(mu.count()), pb(nu.count());
    double acc = 0.0;
    for (int p = 0; p < opts.projections; ++p) {
        double nrm = 0.0;
        for (int j = 0; j < d; ++j) {
            dir[j] = noise.normal({0, 0, rng::kChanProjection,
                                   static_cast<std::uint64_t>(p), static_cast<std::uint64_t>(j)});
            nrm += dir[j] * dir[j];
        }
        nrm = std::sqrt(nrm);
        if (nrm < 1e-12) { dir[0] = 1.0; nrm = 1.0; }
        for (int j = 0; j < d; ++j) dir[j] /= nrm;

        for (size_t i = 0; i < mu.count(); ++i)
            pa[i] = linalg::dot(mu.point(i), dir);
        for (size_t i = 0; i < nu.count(); ++i)
            pb[i] = linalg::dot(nu.point(i), dir);
        const double w = w2_1d(pa, mu.weights(), pb, nu.weights());
        acc += w * w;
    }
    return std::sqrt(acc / opts.projections);
}

}  // namespace

double w2(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, const W2Options& opts) {
    require(mu.dim() == nu.dim(), "w2: dimension mismatch");
    if (mu.dim() == 1) {
        if (mu.count() == nu.count() && mu.uniform_weights() && nu.uniform_weights())
            return w2_1d_equal_uniform(mu, nu);
        return w2_1d(mu.flat_points(), mu.weights(), nu.flat_points(), nu.weights());
    }
    return sliced_w2(mu, nu, opts);
}

}  // namespace mvscale::measure
