#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mvscale/common.hpp"

namespace mvscale::measure {

// Non-owning snapshot of a point cloud with its low-order moments
// precomputed. Coefficient evaluations receive this; built-in models read
// only the moments, so a per-step precomputation keeps them O(1).
struct MeasureView {
    int dim = 0;
    size_t count = 0;
    const double* points = nullptr;   // count x dim, row-major; may be null when count==0
    const double* mean = nullptr;     // dim
    double second_moment = 0.0;       // mean of |z|^2

    std::span<const double> point(size_t i) const {
        return {points + i * static_cast<size_t>(dim), static_cast<size_t>(dim)};
    }
};

// Weighted empirical probability measure on R^n.
class EmpiricalMeasure {
public:
    // Uniform weights. points is count x dim row-major.
    EmpiricalMeasure(int dim, Vec points);
    EmpiricalMeasure(int dim, Vec points, Vec weights);

    static EmpiricalMeasure dirac(Vec point);
    static EmpiricalMeasure from_samples_1d(Vec samples);

    int dim() const { return dim_; }
    size_t count() const { return count_; }
    std::span<const double> point(size_t i) const {
        return {points_.data() + i * static_cast<size_t>(dim_), static_cast<size_t>(dim_)};
    }
    double weight(size_t i) const { return weights_[i]; }
    const Vec& flat_points() const { return points_; }
    const Vec& weights() const { return weights_; }
    bool uniform_weights() const { return uniform_; }

    const Vec& mean() const { return mean_; }
    double second_moment() const { return second_moment_; }

    MeasureView view() const {
        return MeasureView{dim_, count_, points_.data(), mean_.data(), second_moment_};
    }

    // Shift every point by c (same dimension).
    EmpiricalMeasure translated(std::span<const double> c) const;

private:
    void validate_and_finalize();

    int dim_ = 0;
    size_t count_ = 0;
    bool uniform_ = true;
    Vec points_;
    Vec weights_;
    Vec mean_;
    double second_moment_ = 0.0;
};

// k-th raw moment per coordinate, k in [1, 8]. Exact weighted sums.
Vec moment(const EmpiricalMeasure& mu, int k);

struct W2Options {
    int projections = 64;               // sliced estimate, dim > 1 only
    std::uint64_t seed = kDefaultSeed;  // seeds the projection directions
};

// L2-Wasserstein distance. Exact in one dimension (quantile coupling, with
// the merged-CDF algorithm for unequal sizes/weights); sliced estimate for
// dim > 1 (diagnostic only).
double w2(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, const W2Options& opts = {});

// Exact 1-d distance between weighted samples; helper shared with the sliced
// estimator.
double w2_1d(std::span<const double> xs, std::span<const double> wxs,
             std::span<const double> ys, std::span<const double> wys);

}  // namespace mvscale::measure
