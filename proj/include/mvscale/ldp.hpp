#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mvscale/control.hpp"
#include "mvscale/providers.hpp"
#include "mvscale/sim.hpp"

namespace mvscale::ldp {

using model::CoefficientSet;

// Uncontrolled averaged ODE with the self-consistent Dirac law; solved by RK4.
SolvedPath solve_averaged_ode(const CoefficientSet& coeffs, const BbarProvider& bbar,
                              std::span<const double> x0, double horizon, double step);

// Controlled skeleton ODE: drift takes the Dirac law along the *uncontrolled*
// base path; the control acts through sigma on the first d1 channels. RK4 with
// steps aligned to the control grid.
SolvedPath solve_skeleton(const CoefficientSet& coeffs, const BbarProvider& bbar,
                          std::span<const double> x0, const Control& control,
                          const SolvedPath& base, double step_hint = -1.0);

struct AdjointResult {
    Vec gradient;      // intervals x channels (layout of Control::hdot)
    double objective = 0.0;
    double residual = 0.0;   // |x(T) - target|
    Vec endpoint;
    double energy = 0.0;
};

// Gradient of energy + (rho/2) |x(T) - target|^2 by one forward skeleton
// solve and one backward costate solve.
AdjointResult adjoint_gradient(const CoefficientSet& coeffs, const BbarProvider& bbar,
                               std::span<const double> x0, const Control& control,
                               std::span<const double> target, double rho,
                               const SolvedPath& base);

struct RateOptions {
    int grid_k = 64;
    std::vector<double> rho_schedule = {1e2, 1e3, 1e4, 1e5};
    double tol = -1.0;          // default 1e-4 * (1 + |target|)
    int max_iter = 400;         // per continuation stage
    double base_step = -1.0;    // averaged-ODE step; default 1e-4 * horizon
    double horizon = 1.0;
};

struct StageTrace {
    double rho = 0.0;
    int iterations = 0;
    double grad_norm = 0.0;
    double residual = 0.0;
    double energy = 0.0;
};

enum class RateStatus { converged, infeasible };

struct RateResult {
    RateStatus status = RateStatus::converged;
    double rate = 0.0;     // +inf when infeasible
    Control control;
    double residual = 0.0;
    Vec target;
    std::vector<StageTrace> trace;
    std::string trace_text() const;
};

// Endpoint rate function: minimizes the Cameron-Martin energy subject to the
// skeleton hitting the target at the horizon, by quadratic-penalty
// continuation over rho with adjoint-gradient descent (L-BFGS) inside each
// stage. Throws OptimizationError (with the trace) if the final stage fails
// to meet the residual tolerance; returns an infeasible signal when the
// endpoint is insensitive to every control channel.
RateResult rate_function(const CoefficientSet& coeffs, const BbarProvider& bbar,
                         std::span<const double> x0, std::span<const double> target,
                         const RateOptions& opts);

struct ConvergenceRow {
    double delta = 0.0;
    double epsilon = 0.0;
    double distance = 0.0;  // mean over paths of sup_t |X - skeleton|
    double se = 0.0;
};

struct ConvergenceResult {
    std::vector<ConvergenceRow> rows;
    bool monotone = true;  // decreasing within 1 combined SE of slack
};

// Controlled-process convergence toward the skeleton as delta -> 0 with
// epsilon = eps_rule(delta).
ConvergenceResult controlled_convergence_experiment(
    const CoefficientSet& coeffs, const Control& control, const std::vector<double>& delta_list,
    const std::function<double(double)>& eps_rule, const sim::SimConfig& cfg,
    const BbarProvider& bbar, std::span<const double> x0, std::span<const double> y0);

struct RareProbeRow {
    double delta = 0.0;
    double p_hat = 0.0;
    double neg_delta_log_p = 0.0;
    bool flagged = false;  // zero hits: p_hat reported as the 3/samples bound
};

struct RareProbeResult {
    std::vector<RareProbeRow> rows;
    double rate_reference = -1.0;  // caller-supplied rate at the nearest endpoint
};

// Crude Monte Carlo estimate of the endpoint landing in [lo, hi] under the
// small-noise system; order-of-magnitude comparison against the rate value.
RareProbeResult naive_rare_probe(const CoefficientSet& coeffs, const sim::SimConfig& cfg,
                                 double lo, double hi, const std::vector<double>& delta_list,
                                 const std::function<double(double)>& eps_rule,
                                 std::span<const double> x0, std::span<const double> y0,
                                 double rate_reference = -1.0);

}  // namespace mvscale::ldp
