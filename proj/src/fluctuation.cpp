#include "mvscale/fluctuation.hpp"

#include <algorithm>
#include <cmath>

#include "mvscale/linalg.hpp"
#include "mvscale/rng.hpp"

namespace mvscale::fluctuation {

KsResult ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf) {
    require(samples.size() >= 100, "ks_statistic: need at least 100 samples");
    std::sort(samples.begin(), samples.end());
    const size_t n = samples.size();
    double d = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double F = cdf(samples[i]);
        const double lo = static_cast<double>(i) / n;
        const double hi = static_cast<double>(i + 1) / n;
        d = std::max(d, std::max(F - lo, hi - F));
    }
    d = std::min(d, 1.0);
    return {d, 1.36 / std::sqrt(static_cast<double>(n)), n};
}

MomentRow sample_moments(std::span<const double> samples) {
    MomentRow row;
    const size_t k = samples.size();
    row.count = k;
    if (k == 0) return row;
    row.mean = linalg::pairwise_sum(samples) / static_cast<double>(k);
    double m2 = 0.0, m4 = 0.0;
    for (double v : samples) {
        const double d = v - row.mean;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    row.variance = k > 1 ? m2 / static_cast<double>(k - 1) : 0.0;
    row.m4 = m4 / static_cast<double>(k);
    row.mean_se = k > 1 ? std::sqrt(row.variance / static_cast<double>(k)) : 0.0;
    // delta-method SE of the sample variance
    const double var_of_var = std::max(row.m4 - row.variance * row.variance, 0.0);
    row.variance_se = k > 1 ? std::sqrt(var_of_var / static_cast<double>(k)) : 0.0;
    return row;
}

namespace {

Vec endpoint_z_samples(const model::CoefficientSet& coeffs, const SimConfig& cfg,
                       const BbarProvider& bbar, std::span<const double> x0,
                       std::span<const double> y0) {
    SimConfig c = cfg;
    c.record_endpoint = true;
    const sim::PathRecord rec = sim::coupled_deviation(coeffs, c, bbar, x0, y0);
    return rec.endpoint_z;
}

}  // namespace

RateFit averaging_rate_experiment(const model::CoefficientSet& coeffs, const SimConfig& cfg_base,
                                  const std::vector<double>& eps_list, const BbarProvider& bbar,
                                  std::span<const double> x0, std::span<const double> y0) {
    if (eps_list.size() < 3)
        throw ConfigError("averaging_rate_experiment: need >= 3 epsilon values");
    for (size_t i = 1; i < eps_list.size(); ++i)
        if (!(eps_list[i] < eps_list[i - 1]))
            throw ConfigError("averaging_rate_experiment: eps_list must be strictly decreasing");

    RateFit fit;
    fit.points.reserve(eps_list.size());
    for (double eps : eps_list) {
        SimConfig cfg = cfg_base;
        cfg.epsilon = eps;
        const sim::PathRecord rec = sim::coupled_deviation(coeffs, cfg, bbar, x0, y0);
        RatePoint pt;
        pt.epsilon = eps;
        const int M = rec.replicas;
        pt.error = linalg::pairwise_sum(rec.sup_dev_sq) / M;
        double ss = 0.0;
        for (double v : rec.sup_dev_sq) ss += (v - pt.error) * (v - pt.error);
        pt.se = M > 1 ? std::sqrt(ss / (M - 1) / M) : 0.0;
        fit.points.push_back(pt);
    }

    // least squares on log error vs log epsilon
    const size_t k = fit.points.size();
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (const auto& p : fit.points) {
        const double lx = std::log(p.epsilon), ly = std::log(p.error);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double denom = k * sxx - sx * sx;
    fit.slope = (k * sxy - sx * sy) / denom;
    const double intercept = (sy - fit.slope * sx) / k;
    double ss_res = 0.0, ss_tot = 0.0;
    const double ybar = sy / k;
    for (const auto& p : fit.points) {
        const double ly = std::log(p.error);
        const double pred = fit.slope * std::log(p.epsilon) + intercept;
        ss_res += (ly - pred) * (ly - pred);
        ss_tot += (ly - ybar) * (ly - ybar);
    }
    fit.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
    return fit;
}

CltReport clt_experiment(const model::CoefficientSet& coeffs, const SimConfig& cfg,
                         const ThetaProvider& theta, const BbarProvider& bbar,
                         double t_eval, const std::vector<double>& eps_list,
                         std::span<const double> x0, std::span<const double> y0,
                         double oracle_variance) {
    require(coeffs.dims().n == 1, "clt_experiment: KS comparison needs a 1-d slow state");
    CltReport report;
    report.t_eval = t_eval;
    report.oracle_variance = oracle_variance;

    SimConfig base = cfg;
    base.horizon = t_eval;

    std::vector<double> sweep = eps_list;
    if (sweep.empty()) sweep.push_back(cfg.epsilon);

    Vec smallest_cloud;
    for (size_t i = 0; i < sweep.size(); ++i) {
        SimConfig c = base;
        c.epsilon = sweep[i];
        Vec cloud = endpoint_z_samples(coeffs, c, bbar, x0, y0);
        MomentRow row = sample_moments(cloud);
        row.epsilon = sweep[i];
        report.pre_limit.push_back(row);
        if (i + 1 == sweep.size()) smallest_cloud = std::move(cloud);
    }

    // limiting-equation ensemble at an independent seed stream
    SimConfig limit_cfg = base;
    limit_cfg.record_endpoint = true;
    limit_cfg.seed = rng::fold(cfg.seed, 0x11417ULL);
    const sim::PathRecord lim = sim::simulate_limit_fluctuation(coeffs, limit_cfg, theta, bbar, x0);
    report.limit = sample_moments(lim.endpoint_z);

    const MomentRow& last = report.pre_limit.back();
    report.variance_gap = last.variance - report.limit.variance;
    report.variance_gap_se =
        std::sqrt(last.variance_se * last.variance_se +
                  report.limit.variance_se * report.limit.variance_se);

    if (oracle_variance >= 0.0 && oracle_variance < 1e-12) {
        report.degenerate = true;  // flat limit law; KS not defined
    } else if (oracle_variance > 0.0) {
        const double sd = std::sqrt(oracle_variance);
        report.ks = ks_statistic(std::vector<double>(smallest_cloud.begin(), smallest_cloud.end()),
                                 [sd](double z) { return 0.5 * std::erfc(-z / (sd * std::sqrt(2.0))); });
        report.ks_ran = true;
    }

    if (sweep.size() >= 3)
        report.rate = averaging_rate_experiment(coeffs, base, sweep, bbar, x0, y0);
    return report;
}

}  // namespace mvscale::fluctuation
