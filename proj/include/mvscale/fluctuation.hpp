#pragma once

#include <functional>
#include <vector>

#include "mvscale/providers.hpp"
#include "mvscale/sim.hpp"

namespace mvscale::fluctuation {

using sim::SimConfig;

struct KsResult {
    double d = 0.0;
    double threshold95 = 0.0;  // 1.36 / sqrt(count)
    size_t count = 0;
};

// Exact one-sample Kolmogorov-Smirnov statistic against a cdf, with the
// asymptotic 95% acceptance threshold.
KsResult ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf);

struct RatePoint {
    double epsilon = 0.0;
    double error = 0.0;  // mean over replicas of mean_i sup_t |X_i - Xbar_i|^2
    double se = 0.0;
};

struct RateFit {
    double slope = 0.0;
    double r2 = 0.0;
    std::vector<RatePoint> points;
};

// Strong-error decay of the pathwise-coupled pair across an epsilon sweep,
// with a log-log least-squares fit. eps_list must hold >= 3 strictly
// decreasing values.
RateFit averaging_rate_experiment(const model::CoefficientSet& coeffs, const SimConfig& cfg_base,
                                  const std::vector<double>& eps_list, const BbarProvider& bbar,
                                  std::span<const double> x0, std::span<const double> y0);

struct MomentRow {
    double epsilon = 0.0;
    double mean = 0.0, mean_se = 0.0;
    double variance = 0.0, variance_se = 0.0;
    double m4 = 0.0;
    size_t count = 0;
};

struct CltReport {
    double t_eval = 0.0;
    std::vector<MomentRow> pre_limit;       // fluctuation endpoint moments per epsilon
    MomentRow limit;                        // limiting-equation ensemble moments
    double oracle_variance = -1.0;          // < 0 when no oracle was supplied
    bool degenerate = false;                // oracle variance ~ 0: KS skipped
    KsResult ks;                            // smallest-epsilon samples vs the oracle law
    bool ks_ran = false;
    RateFit rate;                           // filled when eps_list has >= 3 entries
    // gap between the smallest-epsilon variance and the limiting ensemble's,
    // with the combined standard error
    double variance_gap = 0.0;
    double variance_gap_se = 0.0;
};

// Builds fluctuation samples of the coupled pair at t_eval for each epsilon,
// simulates the limiting-equation ensemble, and compares moments; for 1-d
// slow states with a positive oracle variance, runs the KS test of the
// smallest-epsilon endpoint cloud against the centered Gaussian law.
CltReport clt_experiment(const model::CoefficientSet& coeffs, const SimConfig& cfg,
                         const ThetaProvider& theta, const BbarProvider& bbar,
                         double t_eval, const std::vector<double>& eps_list,
                         std::span<const double> x0, std::span<const double> y0,
                         double oracle_variance = -1.0);

// Moments of a 1-d sample with delta-method standard errors.
MomentRow sample_moments(std::span<const double> samples);

}  // namespace mvscale::fluctuation
