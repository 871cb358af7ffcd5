#include "mvscale/runner.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mvscale/averaging.hpp"
#include "mvscale/fluctuation.hpp"
#include "mvscale/ldp.hpp"
#include "mvscale/version.hpp"

namespace mvscale::cli {

namespace {

namespace fs = std::filesystem;

struct Context {
    const RunConfig& cfg;
    std::shared_ptr<const model::CoefficientSet> coeffs;
    fs::path outdir;
    RunReport report;

    void add_file(const fs::path& p) { report.files.push_back(p.string()); }
    void check(const std::string& name, bool pass, const std::string& detail) {
        report.checks.push_back({name, pass, detail});
    }
};

std::ofstream open_out(Context& ctx, const std::string& name) {
    const fs::path p = ctx.outdir / name;
    std::ofstream os(p);
    if (!os) throw ConfigError("cannot write " + p.string());
    ctx.add_file(p);
    return os;
}

std::unique_ptr<BbarProvider> make_bbar(const Context& ctx, double gamma) {
    if (ctx.coeffs->has_analytic_oracle())
        return std::make_unique<AnalyticBbarProvider>(ctx.coeffs);
    averaging::EstimatorOpts opts;
    opts.gamma = gamma;
    opts.replicas = 64;
    opts.seed = ctx.cfg.sim.seed;
    return std::make_unique<averaging::EstimatedBbarProvider>(ctx.coeffs, opts);
}

double probe_gamma(const Context& ctx, double configured) {
    if (configured > 0) return configured;
    return model::dissipativity_probe(*ctx.coeffs, 1000, ctx.cfg.sim.seed);
}

void write_field_rows(std::ofstream& os, const std::string& quantity,
                      const averaging::AveragedField& f) {
    for (int i = 0; i < f.value.rows; ++i)
        for (int j = 0; j < f.value.cols; ++j) {
            const int coord = i * f.value.cols + j;
            os << quantity << ',' << coord << ',' << f.value(i, j) << ','
               << f.std_error(i, j) << '\n';
        }
}

// ---------------------------------------------------------------------------

void run_probe(Context& ctx) {
    const auto& exp = ctx.cfg.experiment;
    model::ProbeOptions popts;
    popts.box_halfwidth = exp["box"].get<double>();
    const double gamma = model::dissipativity_probe(
        *ctx.coeffs, static_cast<int>(exp["samples"].get<std::int64_t>()), ctx.cfg.sim.seed,
        popts);
    auto os = open_out(ctx, "probe.csv");
    os << "quantity,value\n";
    os << "gamma_est," << gamma << '\n';
    ctx.check("dissipativity_margin_positive", gamma > 0,
              "gamma_est = " + std::to_string(gamma));
}

void run_simulate(Context& ctx) {
    const auto& exp = ctx.cfg.experiment;
    const std::string system = exp["system"].get<std::string>();
    sim::PathRecord rec;
    if (system == "slowfast") {
        rec = sim::simulate_slowfast(*ctx.coeffs, ctx.cfg.sim, ctx.cfg.x0, ctx.cfg.y0);
    } else if (system == "smallnoise") {
        rec = sim::simulate_smallnoise(*ctx.coeffs, ctx.cfg.sim, ctx.cfg.x0, ctx.cfg.y0);
    } else if (system == "averaged") {
        const double gamma = probe_gamma(ctx, -1.0);
        const auto bbar = make_bbar(ctx, gamma);
        rec = sim::simulate_averaged(*ctx.coeffs, ctx.cfg.sim, *bbar, ctx.cfg.x0);
    } else if (system == "frozen") {
        const measure::EmpiricalMeasure mu = measure::EmpiricalMeasure::dirac(ctx.cfg.x0);
        rec = sim::simulate_frozen(*ctx.coeffs, ctx.cfg.x0, mu, ctx.cfg.y0,
                                   ctx.cfg.sim.horizon, exp["frozen_step"].get<double>(),
                                   ctx.cfg.sim.seed);
    } else {  // limit
        const double gamma = probe_gamma(ctx, -1.0);
        const auto bbar = make_bbar(ctx, gamma);
        std::unique_ptr<ThetaProvider> theta;
        if (ctx.cfg.is_linear()) {
            theta = std::make_unique<ConstantThetaProvider>(
                ConstantThetaProvider::scalar(model::oracle_theta(ctx.cfg.linear)));
        } else {
            averaging::EstimatorOpts topts;
            topts.gamma = gamma;
            topts.seed = ctx.cfg.sim.seed;
            topts.theta_points = 16;
            topts.theta_phi_replicas = 64;
            theta = std::make_unique<averaging::EstimatedThetaProvider>(
                ctx.coeffs, std::shared_ptr<const BbarProvider>(make_bbar(ctx, gamma).release()),
                topts);
        }
        rec = sim::simulate_limit_fluctuation(*ctx.coeffs, ctx.cfg.sim, *theta, *bbar,
                                              ctx.cfg.x0);
    }
    auto os = open_out(ctx, "paths.csv");
    rec.write_csv(os);
    ctx.check("simulation_completed", true, system);
}

void run_average(Context& ctx) {
    const auto& exp = ctx.cfg.experiment;
    const double gamma = probe_gamma(ctx, exp["gamma"].get<double>());
    averaging::EstimatorOpts opts;
    opts.gamma = gamma;
    opts.replicas = static_cast<int>(exp["replicas"].get<std::int64_t>());
    opts.burn_in = exp["burn_in"].get<double>();
    opts.spacing = exp["spacing"].get<double>();
    opts.step = exp["step"].get<double>();
    opts.horizon = exp["horizon"].get<double>();
    opts.seed = ctx.cfg.sim.seed;

    std::vector<std::pair<double, double>> points;
    if (exp.contains("grid")) {
        for (const auto& p : exp["grid"])
            points.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    } else {
        points.emplace_back(exp["x"].get<double>(), exp["mean"].get<double>());
    }

    auto os = open_out(ctx, "averaged.csv");
    os << "quantity,coordinate,value,std_error\n";
    bool all_ok = true;
    for (const auto& [x, mean] : points) {
        const Vec xv{x};
        const measure::EmpiricalMeasure mu = measure::EmpiricalMeasure::dirac(Vec{mean});
        const auto field = averaging::estimate_bbar(*ctx.coeffs, xv, mu, opts);
        std::ostringstream name;
        name << "bbar[x=" << x << ";mean=" << mean << ']';
        write_field_rows(os, name.str(), field);
        if (ctx.cfg.is_linear()) {
            const double oracle = model::oracle_bbar(ctx.cfg.linear, x, mean);
            const double err = std::fabs(field.value(0, 0) - oracle);
            const double tolerance =
                std::max(0.02 * std::fabs(oracle), 3.0 * field.std_error(0, 0));
            const bool ok = err <= tolerance;
            all_ok = all_ok && ok;
            std::ostringstream detail;
            detail << name.str() << " err=" << err << " tol=" << tolerance;
            ctx.check("bbar_matches_oracle", ok, detail.str());
        }
    }
    if (!ctx.cfg.is_linear())
        ctx.check("bbar_estimated", true, std::to_string(points.size()) + " points");
    (void)all_ok;
}

void run_poisson(Context& ctx) {
    const auto& exp = ctx.cfg.experiment;
    const double gamma = probe_gamma(ctx, exp["gamma"].get<double>());
    averaging::EstimatorOpts opts;
    opts.gamma = gamma;
    opts.replicas = static_cast<int>(exp["replicas"].get<std::int64_t>());
    opts.phi_horizon = exp["phi_horizon"].get<double>();
    opts.step = exp["step"].get<double>();
    opts.seed = ctx.cfg.sim.seed;

    const double x = exp["x"].get<double>();
    const double mean = exp["mean"].get<double>();
    const Vec xv{x};
    const measure::EmpiricalMeasure mu = measure::EmpiricalMeasure::dirac(Vec{mean});
    const auto bbar = make_bbar(ctx, gamma);

    auto os = open_out(ctx, "poisson.csv");
    os << "quantity,coordinate,value,std_error\n";
    for (const auto& yj : exp["y"]) {
        const double y = yj.get<double>();
        const Vec yv{y};
        const auto field = averaging::estimate_phi(*ctx.coeffs, *bbar, xv, mu, yv, opts);
        std::ostringstream name;
        name << "phi[x=" << x << ";mean=" << mean << ";y=" << y << ']';
        write_field_rows(os, name.str(), field);
        ctx.check("phi_tail_within_noise", !field.meta.tail_warning,
                  name.str() + " tail=" + std::to_string(field.meta.tail_estimate));
        if (ctx.cfg.is_linear()) {
            const double oracle = model::oracle_phi(ctx.cfg.linear, x, mean, y);
            const double err = std::fabs(field.value(0, 0) - oracle);
            const double tolerance =
                std::max(0.05 * std::fabs(oracle), 3.0 * field.std_error(0, 0));
            ctx.check("phi_matches_oracle", err <= tolerance,
                      name.str() + " err=" + std::to_string(err));
        }
        if (exp["derivative"].get<bool>()) {
            const auto dfield =
                averaging::estimate_dphi_dy(*ctx.coeffs, *bbar, xv, mu, yv, opts);
            std::ostringstream dname;
            dname << "dphi_dy[x=" << x << ";mean=" << mean << ";y=" << y << ']';
            write_field_rows(os, dname.str(), dfield);
        }
    }
}

void run_clt(Context& ctx) {
    const auto& exp = ctx.cfg.experiment;
    const double t_eval = exp["t_eval"].get<double>();
    std::vector<double> eps_list;
    for (const auto& e : exp["eps_list"]) eps_list.push_back(e.get<double>());

    double oracle_var = exp["oracle_variance"].get<double>();
    if (oracle_var < 0 && ctx.cfg.is_linear())
        oracle_var = model::oracle_clt_variance(ctx.cfg.linear, t_eval);

    const double gamma = probe_gamma(ctx, -1.0);
    const auto bbar = make_bbar(ctx, gamma);
    std::unique_ptr<ThetaProvider> theta;
    if (ctx.cfg.is_linear()) {
        theta = std::make_unique<ConstantThetaProvider>(
            ConstantThetaProvider::scalar(model::oracle_theta(ctx.cfg.linear)));
    } else {
        averaging::EstimatorOpts topts;
        topts.gamma = gamma;
        topts.seed = ctx.cfg.sim.seed;
        topts.theta_points = 16;
        topts.theta_phi_replicas = 64;
        theta = std::make_unique<averaging::EstimatedThetaProvider>(
            ctx.coeffs, std::shared_ptr<const BbarProvider>(make_bbar(ctx, gamma).release()),
            topts);
    }

    const auto report = fluctuation::clt_experiment(*ctx.coeffs, ctx.cfg.sim, *theta, *bbar,
                                                    t_eval, eps_list, ctx.cfg.x0, ctx.cfg.y0,
                                                    oracle_var);

    auto os = open_out(ctx, "clt.csv");
    os << "epsilon,statistic,value,std_error,oracle,pass\n";
    const auto row = [&](double eps, const std::string& stat, double val, double se,
                         double oracle, bool pass) {
        os << eps << ',' << stat << ',' << val << ',' << se << ',' << oracle << ','
           << (pass ? 1 : 0) << '\n';
    };

    for (const auto& m : report.pre_limit) {
        const bool mean_ok = std::fabs(m.mean) <= 3.0 * m.mean_se;
        row(m.epsilon, "mean_z", m.mean, m.mean_se, 0.0, mean_ok);
        bool var_ok = true;
        if (oracle_var >= 0)
            var_ok = std::fabs(m.variance - oracle_var) <=
                     std::max(0.10 * oracle_var, 3.0 * m.variance_se);
        row(m.epsilon, "var_z", m.variance, m.variance_se, oracle_var, var_ok);
    }
    const auto& last = report.pre_limit.back();
    ctx.check("fluctuation_mean_centered", std::fabs(last.mean) <= 3.0 * last.mean_se,
              "mean=" + std::to_string(last.mean));
    if (oracle_var >= 0 && !report.degenerate) {
        const bool var_ok = std::fabs(last.variance - oracle_var) <=
                            std::max(0.10 * oracle_var, 3.0 * last.variance_se);
        ctx.check("fluctuation_variance_matches_oracle", var_ok,
                  "var=" + std::to_string(last.variance) +
                      " oracle=" + std::to_string(oracle_var));
    }

    row(last.epsilon, "limit_var_z", report.limit.variance, report.limit.variance_se,
        oracle_var, true);
    row(last.epsilon, "variance_gap_vs_limit", report.variance_gap, report.variance_gap_se,
        0.0, true);

    if (report.degenerate) {
        row(last.epsilon, "ks_degenerate", 1.0, 0.0, 0.0, true);
        ctx.check("ks_skipped_degenerate", true, "flat limiting law");
    } else if (report.ks_ran) {
        const bool ks_ok = report.ks.d < report.ks.threshold95;
        row(last.epsilon, "ks_d", report.ks.d, 0.0, report.ks.threshold95, ks_ok);
        ctx.check("ks_below_threshold", ks_ok,
                  "D=" + std::to_string(report.ks.d) +
                      " thr=" + std::to_string(report.ks.threshold95));
    }

    if (!report.rate.points.empty()) {
        row(0.0, "rate_slope", report.rate.slope, 0.0, 1.0, true);
        row(0.0, "rate_r2", report.rate.r2, 0.0, 1.0, true);
    }
}

void run_rate(Context& ctx) {
    const auto& exp = ctx.cfg.experiment;
    const double gamma = probe_gamma(ctx, -1.0);
    const auto bbar = make_bbar(ctx, gamma);

    ldp::RateOptions opts;
    opts.horizon = ctx.cfg.sim.horizon;
    opts.grid_k = static_cast<int>(exp["grid_k"].get<std::int64_t>());
    opts.tol = exp["tol"].get<double>();
    if (exp.contains("rho_schedule")) {
        opts.rho_schedule.clear();
        for (const auto& r : exp["rho_schedule"]) opts.rho_schedule.push_back(r.get<double>());
    }
    const Vec target{exp["target"].get<double>()};

    const auto result = ldp::rate_function(*ctx.coeffs, *bbar, ctx.cfg.x0, target, opts);

    auto os = open_out(ctx, "rate.csv");
    os << "quantity,value\n";
    os << "target," << target[0] << '\n';
    os << "rate," << result.rate << '\n';
    os << "residual," << result.residual << '\n';
    os << "infeasible," << (result.status == ldp::RateStatus::infeasible ? 1 : 0) << '\n';

    auto ctl = open_out(ctx, "rate_control.csv");
    ctl << "interval,t,channel,hdot\n";
    for (int k = 0; k < result.control.intervals; ++k) {
        const auto hv = result.control.values_at_interval(k);
        for (int c = 0; c < result.control.channels; ++c)
            ctl << k << ',' << k * result.control.dt() << ',' << c << ',' << hv[c] << '\n';
    }

    auto trace = open_out(ctx, "rate_trace.csv");
    trace << result.trace_text();

    ctx.check("rate_optimizer_converged", result.status == ldp::RateStatus::converged,
              "rate=" + std::to_string(result.rate) +
                  " residual=" + std::to_string(result.residual));
}

void run_controlled(Context& ctx) {
    const auto& exp = ctx.cfg.experiment;
    const double gamma = probe_gamma(ctx, -1.0);
    const auto bbar = make_bbar(ctx, gamma);

    std::vector<double> deltas;
    for (const auto& d : exp["delta_list"]) deltas.push_back(d.get<double>());

    const std::string rule_name = exp["eps_rule"].get<std::string>();
    const double factor = exp["eps_factor"].get<double>();
    const auto rule = [rule_name, factor](double delta) {
        return rule_name == "delta_sq" ? delta * delta : factor * delta;
    };

    const auto& dims = ctx.coeffs->dims();
    const int K = static_cast<int>(exp["control_intervals"].get<std::int64_t>());
    const double amp = exp["control_amplitude"].get<double>();
    const int channel = static_cast<int>(exp["control_channel"].get<std::int64_t>());
    require(channel >= 0 && channel < dims.d1 + dims.d2,
            "experiment.control_channel out of range");
    ldp::Control control = ldp::Control::zeros(ctx.cfg.sim.horizon, K, dims.d1 + dims.d2);
    for (int k = 0; k < K; ++k) {
        const double t = (k + 0.5) * control.dt();
        control.values_at_interval(k)[channel] =
            amp * std::sin(M_PI * t / ctx.cfg.sim.horizon);
    }

    const auto result = ldp::controlled_convergence_experiment(
        *ctx.coeffs, control, deltas, rule, ctx.cfg.sim, *bbar, ctx.cfg.x0, ctx.cfg.y0);

    auto os = open_out(ctx, "controlled.csv");
    os << "delta,epsilon,distance,std_error\n";
    for (const auto& r : result.rows)
        os << r.delta << ',' << r.epsilon << ',' << r.distance << ',' << r.se << '\n';

    ctx.check("controlled_distance_decreases", result.monotone,
              "rows=" + std::to_string(result.rows.size()));
}

json checks_to_json(const RunReport& report) {
    json arr = json::array();
    for (const auto& c : report.checks)
        arr.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
    return arr;
}

}  // namespace

RunReport run(const std::string& subcommand, const RunConfig& cfg) {
    Context ctx{cfg, nullptr, fs::path(cfg.output_dir), {}};
    json manifest;
    manifest["subcommand"] = subcommand;
    manifest["version"] = std::string(kVersion) + "+" + kGitRevision;
    manifest["seed"] = cfg.sim.seed;
    manifest["warnings"] = cfg.warnings;

    try {
        fs::create_directories(ctx.outdir);
        ctx.coeffs = cfg.make_model();

        if (subcommand == "probe") run_probe(ctx);
        else if (subcommand == "simulate") run_simulate(ctx);
        else if (subcommand == "average") run_average(ctx);
        else if (subcommand == "poisson") run_poisson(ctx);
        else if (subcommand == "clt") run_clt(ctx);
        else if (subcommand == "rate") run_rate(ctx);
        else if (subcommand == "controlled") run_controlled(ctx);
        else throw ConfigError("unknown subcommand: " + subcommand);

        for (const auto& c : ctx.report.checks)
            if (!c.pass) ctx.report.exit_code = 1;
    } catch (const OptimizationError& e) {
        ctx.report.error = e.what();
        manifest["trace"] = e.trace;
        ctx.report.exit_code = 1;
    } catch (const std::exception& e) {
        ctx.report.error = e.what();
        ctx.report.exit_code = 1;
    }

    manifest["checks"] = checks_to_json(ctx.report);
    manifest["files"] = ctx.report.files;
    manifest["status"] = ctx.report.exit_code == 0 ? "pass" : "fail";
    if (!ctx.report.error.empty()) manifest["error"] = ctx.report.error;
    manifest["config_echo"] = {
        {"model", cfg.model_name},
        {"epsilon", cfg.sim.epsilon},
        {"delta", cfg.sim.delta},
        {"horizon", cfg.sim.horizon},
        {"particles", cfg.sim.particles},
        {"replicas", cfg.sim.replicas},
        {"experiment", cfg.experiment},
    };
    try {
        fs::create_directories(ctx.outdir);
        std::ofstream mf(ctx.outdir / "manifest.json");
        mf << manifest.dump(2) << '\n';
        ctx.report.files.push_back((ctx.outdir / "manifest.json").string());
    } catch (...) {
        // manifest write failure only matters if everything else worked
        if (ctx.report.exit_code == 0) ctx.report.exit_code = 1;
    }
    return ctx.report;
}

RunReport run_from_text(const std::string& subcommand, const std::string& config_text) {
    try {
        const RunConfig cfg = parse_config(config_text, subcommand);
        return run(subcommand, cfg);
    } catch (const std::exception& e) {
        RunReport report;
        report.exit_code = 1;
        report.error = e.what();
        return report;
    }
}

}  // namespace mvscale::cli
