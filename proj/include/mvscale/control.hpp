#pragma once

#include <algorithm>
#include <span>

#include "mvscale/common.hpp"

namespace mvscale::ldp {

// Piecewise-constant control derivative on a uniform grid over [0, horizon].
// Values live in R^{d1+d2}; the first d1 channels drive the slow noise
// directions, the remaining d2 the fast ones.
struct Control {
    double horizon = 1.0;
    int intervals = 0;
    int channels = 0;
    Vec hdot;  // intervals x channels, row-major

    static Control zeros(double horizon, int intervals, int channels) {
        Control c;
        c.horizon = horizon;
        c.intervals = intervals;
        c.channels = channels;
        c.hdot.assign(static_cast<size_t>(intervals) * channels, 0.0);
        return c;
    }

    double dt() const { return horizon / intervals; }

    int interval_of(double t) const {
        int k = static_cast<int>(t / dt());
        if (k < 0) k = 0;
        if (k >= intervals) k = intervals - 1;
        return k;
    }

    std::span<const double> values_at_interval(int k) const {
        return {hdot.data() + static_cast<size_t>(k) * channels, static_cast<size_t>(channels)};
    }
    std::span<double> values_at_interval(int k) {
        return {hdot.data() + static_cast<size_t>(k) * channels, static_cast<size_t>(channels)};
    }

    // Cameron-Martin energy 0.5 * sum_k |hdot_k|^2 * dt.
    double energy() const {
        double acc = 0.0;
        for (int k = 0; k < intervals; ++k) {
            const auto v = values_at_interval(k);
            double s = 0.0;
            for (double u : v) s += u * u;
            acc += s;
        }
        return 0.5 * acc * dt();
    }

    // Membership in the level set { 2 * energy <= bound }.
    bool within_energy_bound(double bound) const { return 2.0 * energy() <= bound; }
};

// Deterministic path on a uniform grid with linear interpolation; output of
// the averaged-ODE and skeleton solvers, reference input for sup-distance
// tracking in the simulators.
struct SolvedPath {
    int dim = 0;
    double horizon = 0.0;
    Vec states;  // (steps+1) x dim

    int steps() const { return static_cast<int>(states.size()) / dim - 1; }

    void eval(double t, std::span<double> out) const {
        const int K = steps();
        const double h = horizon / K;
        double pos = t / h;
        if (pos <= 0.0) pos = 0.0;
        if (pos >= K) pos = K;
        const int i0 = std::min(static_cast<int>(pos), K - 1);
        const double fr = pos - i0;
        const double* a = &states[static_cast<size_t>(i0) * dim];
        const double* b = a + dim;
        for (int j = 0; j < dim; ++j) out[j] = a[j] * (1.0 - fr) + b[j] * fr;
    }

    std::span<const double> endpoint() const {
        return {states.data() + states.size() - dim, static_cast<size_t>(dim)};
    }
};

}  // namespace mvscale::ldp
