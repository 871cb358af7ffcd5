#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>

#include "mvscale/common.hpp"
#include "mvscale/control.hpp"
#include "mvscale/measure.hpp"
#include "mvscale/model.hpp"
#include "mvscale/providers.hpp"

namespace mvscale::sim {

using measure::EmpiricalMeasure;
using measure::MeasureView;
using model::CoefficientSet;

struct SimConfig {
    double epsilon = 0.01;   // time-scale ratio, > 0
    double delta = 1.0;      // slow-noise scale in (0, 1]
    double dt_ratio = 0.05;  // micro step = dt_ratio * epsilon
    double horizon = 1.0;
    int particles = 2;
    int replicas = 1;
    std::uint64_t seed = kDefaultSeed;

    double macro_dt = 1e-3;  // step of the averaged / limiting integrators
    int sample_points = 101; // statistics grid (includes t=0 and t=horizon)
    int workers = 0;         // 0: MVSCALE_WORKERS env or hardware concurrency

    // Gaussian initial spread around the given x0/y0 (0 = deterministic).
    double init_spread_x = 0.0;
    double init_spread_y = 0.0;

    bool record_endpoint = false;  // keep endpoint particle clouds
    bool record_paths = false;     // keep sampled per-particle slow paths

    void validate() const;
};

// Reductions of an ensemble run. Statistics are indexed [replica][time];
// vector-valued statistics append the coordinate. Per-path sup monitors are
// averaged over particles within each replica.
struct PathRecord {
    int dim_x = 0;
    int dim_y = 0;   // 0 when no fast component was tracked
    int dim_z = 0;   // 0 when no fluctuation component was tracked
    int replicas = 0;
    int particles = 0;
    double epsilon = 0.0;
    double delta = 1.0;

    std::vector<double> times;

    Vec mean_x;       // replicas * times * dim_x
    Vec var_x;        // replicas * times   (mean |x - mean|^2)
    Vec mean_y;       // replicas * times * dim_y
    Vec var_y;        // replicas * times
    Vec mean_z;       // replicas * times * dim_z
    Vec var_z;        // replicas * times
    Vec mean_dev_sq;  // replicas * times   (coupled runs: mean |X - Xbar|^2)

    Vec sup_x6;       // replicas: mean_i (sup_t |X_i|)^6
    Vec sup_y4;       // replicas: mean_i (sup_t |Y_i|)^4
    Vec sup_dev_sq;   // replicas: mean_i sup_t |X_i - Xbar_i|^2
    Vec sup_ref_dist; // replicas: mean_i sup_t |X_i - reference(t)|

    Vec endpoint_x;   // replicas * particles * dim_x (record_endpoint)
    Vec endpoint_y;
    Vec endpoint_z;

    Vec paths_x;      // replicas * times * particles * dim_x (record_paths)

    size_t stat_index(int rep, int k) const {
        return static_cast<size_t>(rep) * times.size() + static_cast<size_t>(k);
    }
    // columns: time, replica, statistic, value
    void write_csv(std::ostream& os) const;
};

// Coupled slow-fast ensemble, the small-noise variant and the controlled
// variant all share one integrator (micro step dt_ratio * epsilon for both
// components); this keeps the delta=1 and zero-control reductions bit-exact.
PathRecord simulate_slowfast(const CoefficientSet& coeffs, const SimConfig& cfg,
                             std::span<const double> x0, std::span<const double> y0);

// sigma scaled by sqrt(cfg.delta).
PathRecord simulate_smallnoise(const CoefficientSet& coeffs, const SimConfig& cfg,
                               std::span<const double> x0, std::span<const double> y0);

// Adds sigma P1 hdot to the slow drift and g P2 hdot / sqrt(delta epsilon)
// to the fast drift.
PathRecord simulate_controlled(const CoefficientSet& coeffs, const SimConfig& cfg,
                               const ldp::Control& control, std::span<const double> x0,
                               std::span<const double> y0);

// Controlled run that also tracks, per particle, the sup over the micro grid
// of |X - reference(t)|; the mean over particles lands in sup_ref_dist.
PathRecord simulate_controlled_vs_reference(const CoefficientSet& coeffs, const SimConfig& cfg,
                                            const ldp::Control& control,
                                            const ldp::SolvedPath& reference,
                                            std::span<const double> x0,
                                            std::span<const double> y0);

// Slow-only ensemble driven by the averaged drift (macro step cfg.macro_dt).
PathRecord simulate_averaged(const CoefficientSet& coeffs, const SimConfig& cfg,
                             const BbarProvider& bbar, std::span<const double> x0);

// Fast equation with (x, mu) frozen; single path visitor form. The caller is
// responsible for step-size stability (step * local Lipschitz bound < 2).
void run_frozen(const CoefficientSet& coeffs, std::span<const double> x,
                const MeasureView& mu, std::span<const double> y0, double horizon,
                double step, std::uint64_t seed, std::uint64_t replica_tag,
                const std::function<void(int, double, std::span<const double>)>& visit);

// Convenience wrapper recording the fast path into a PathRecord.
PathRecord simulate_frozen(const CoefficientSet& coeffs, std::span<const double> x,
                           const EmpiricalMeasure& mu, std::span<const double> y0,
                           double horizon, double step, std::uint64_t seed);

// Particle scheme for the limiting fluctuation SDE: pairs (Xbar_i, Z_i) with
// the Lions-derivative mean-field coupling and the fresh Theta noise channel.
PathRecord simulate_limit_fluctuation(const CoefficientSet& coeffs, const SimConfig& cfg,
                                      const ThetaProvider& theta, const BbarProvider& bbar,
                                      std::span<const double> x0);

// Pathwise-coupled pair: the slow-fast system and the averaged system share
// the per-particle slow noise; Z = (X - Xbar)/sqrt(epsilon) is recorded.
PathRecord coupled_deviation(const CoefficientSet& coeffs, const SimConfig& cfg,
                             const BbarProvider& bbar, std::span<const double> x0,
                             std::span<const double> y0);

}  // namespace mvscale::sim
