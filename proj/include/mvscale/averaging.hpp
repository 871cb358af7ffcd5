#pragma once

#include <cstdint>
#include <memory>

#include "mvscale/linalg.hpp"
#include "mvscale/measure.hpp"
#include "mvscale/model.hpp"
#include "mvscale/providers.hpp"

namespace mvscale::averaging {

using linalg::Matrix;
using measure::EmpiricalMeasure;
using measure::MeasureView;
using model::CoefficientSet;

// Tuning knobs for the frozen-equation estimators. Negative values are
// resolved from the dissipativity margin gamma: burn_in = 10/gamma, sample
// spacing = 1/gamma (the fast autocorrelation time), integration horizon for
// the centered-drift integral = 12/gamma, frozen step = 0.1/gamma.
struct EstimatorOpts {
    double gamma = 0.0;       // dissipativity margin; must be > 0
    double burn_in = -1.0;
    double spacing = -1.0;
    double horizon = -1.0;    // pooled-sampling horizon (invariant sampling)
    double step = -1.0;
    int replicas = 200;
    std::uint64_t seed = kDefaultSeed;

    double phi_horizon = -1.0;     // time-integral truncation for the Poisson solution
    double fd_step_scale = 1e-2;   // finite-difference step = scale * (1 + |y|)
    int theta_points = 64;         // invariant samples used in the Theta average
    int theta_phi_replicas = 200;  // frozen replicas per derivative evaluation

    struct Resolved {
        double gamma, burn_in, spacing, horizon, step, phi_horizon;
        int replicas;
        std::uint64_t seed;
    };
    Resolved resolve() const;
};

// Estimator output with standard errors and provenance metadata.
struct AveragedField {
    Matrix value;
    Matrix std_error;
    struct Meta {
        double burn_in = 0.0;
        double horizon = 0.0;
        int replicas = 0;
        double step = 0.0;
        size_t pool_size = 0;
        double tail_estimate = 0.0;  // last-decile integral magnitude (phi only)
        bool tail_warning = false;
        bool clipped_eigenvalue = false;  // Theta only
    } meta;
};

// Pooled samples of the frozen equation's invariant law at (x, mu): runs
// opts.replicas paths, discards the burn-in, then pools states at the
// decorrelation spacing.
EmpiricalMeasure sample_invariant(const CoefficientSet& coeffs, std::span<const double> x,
                                  const EmpiricalMeasure& mu, const EstimatorOpts& opts);

// Monte Carlo average of b(x, mu, .) over the sampled invariant law.
AveragedField estimate_bbar(const CoefficientSet& coeffs, std::span<const double> x,
                            const EmpiricalMeasure& mu, const EstimatorOpts& opts);

// Poisson-equation solution by the time-integral representation: integrates
// the replica-averaged centered drift along frozen paths started at y. The
// last-decile tail magnitude is reported; exceeding 3 SE flags a warning.
AveragedField estimate_phi(const CoefficientSet& coeffs, const BbarProvider& bbar,
                           std::span<const double> x, const EmpiricalMeasure& mu,
                           std::span<const double> y, const EstimatorOpts& opts);

// Central finite differences of estimate_phi in each fast coordinate with
// common random numbers across the +/- runs. Result is n x m.
AveragedField estimate_dphi_dy(const CoefficientSet& coeffs, const BbarProvider& bbar,
                               std::span<const double> x, const EmpiricalMeasure& mu,
                               std::span<const double> y, const EstimatorOpts& opts);

// Fluctuation diffusion: averages (dPhi/dy g)(dPhi/dy g)^T over invariant
// samples, then takes the symmetric PSD square root. Eigenvalues below
// -1e-6 * trace abort with an estimation error; clips below -1e-8 * trace
// set the warning flag.
AveragedField estimate_theta(const CoefficientSet& coeffs, const BbarProvider& bbar,
                             std::span<const double> x, const EmpiricalMeasure& mu,
                             const EstimatorOpts& opts);

// bbar backed by the invariant-measure estimator. Each evaluation derives its
// noise stream from the hash of (x, mean of mu), so concurrent calls are pure
// functions of their arguments.
class EstimatedBbarProvider final : public BbarProvider {
public:
    EstimatedBbarProvider(std::shared_ptr<const CoefficientSet> coeffs, EstimatorOpts opts)
        : coeffs_(std::move(coeffs)), opts_(std::move(opts)) {}
    void eval(std::span<const double> x, const MeasureView& mu,
              std::span<double> out) const override;

private:
    std::shared_ptr<const CoefficientSet> coeffs_;
    EstimatorOpts opts_;
};

// Theta backed by estimate_theta (expensive; qualitative runs).
class EstimatedThetaProvider final : public ThetaProvider {
public:
    EstimatedThetaProvider(std::shared_ptr<const CoefficientSet> coeffs,
                           std::shared_ptr<const BbarProvider> bbar, EstimatorOpts opts)
        : coeffs_(std::move(coeffs)), bbar_(std::move(bbar)), opts_(std::move(opts)) {}
    void eval(std::span<const double> x, const MeasureView& mu,
              std::span<double> out) const override;

private:
    std::shared_ptr<const CoefficientSet> coeffs_;
    std::shared_ptr<const BbarProvider> bbar_;
    EstimatorOpts opts_;
};

// Decorates a model lacking analytic averaged derivatives with central
// finite differences of the supplied bbar (noisy when bbar is estimated;
// intended for qualitative runs of the limiting equation).
std::shared_ptr<const CoefficientSet> with_fd_averaged_derivatives(
    std::shared_ptr<const CoefficientSet> coeffs, std::shared_ptr<const BbarProvider> bbar,
    double fd_step = 1e-3);

}  // namespace mvscale::averaging
