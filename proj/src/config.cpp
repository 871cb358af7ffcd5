#include "mvscale/config.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace mvscale::cli {

namespace {

class Validator {
public:
    std::vector<std::string> errors;

    void fail(const std::string& path, const std::string& msg) {
        errors.push_back(path + ": " + msg);
    }

    void check_known_keys(const json& obj, const std::string& path,
                          const std::set<std::string>& allowed) {
        for (const auto& [key, _] : obj.items())
            if (!allowed.count(key)) fail(path + "." + key, "unknown key");
    }

    double number(const json& obj, const std::string& path, const std::string& key,
                  double fallback) {
        if (!obj.contains(key)) return fallback;
        if (!obj[key].is_number()) {
            fail(path + "." + key, "expected a number");
            return fallback;
        }
        return obj[key].get<double>();
    }

    std::int64_t integer(const json& obj, const std::string& path, const std::string& key,
                         std::int64_t fallback) {
        if (!obj.contains(key)) return fallback;
        if (!obj[key].is_number_integer()) {
            fail(path + "." + key, "expected an integer");
            return fallback;
        }
        return obj[key].get<std::int64_t>();
    }

    std::string text(const json& obj, const std::string& path, const std::string& key,
                     const std::string& fallback) {
        if (!obj.contains(key)) return fallback;
        if (!obj[key].is_string()) {
            fail(path + "." + key, "expected a string");
            return fallback;
        }
        return obj[key].get<std::string>();
    }

    Vec number_list(const json& obj, const std::string& path, const std::string& key,
                    Vec fallback) {
        if (!obj.contains(key)) return fallback;
        if (!obj[key].is_array()) {
            fail(path + "." + key, "expected a list of numbers");
            return fallback;
        }
        Vec out;
        for (const auto& v : obj[key]) {
            if (!v.is_number()) {
                fail(path + "." + key, "expected a list of numbers");
                return fallback;
            }
            out.push_back(v.get<double>());
        }
        return out;
    }
};

void validate_experiment(Validator& v, json& exp, const std::string& sub) {
    const std::string path = "experiment";
    if (sub == "simulate") {
        v.check_known_keys(exp, path, {"system", "frozen_step"});
        const std::string sys = v.text(exp, path, "system", "slowfast");
        static const std::set<std::string> known = {"slowfast", "smallnoise", "averaged",
                                                    "frozen", "limit"};
        if (!known.count(sys))
            v.fail(path + ".system",
                   "must be one of slowfast, smallnoise, averaged, frozen, limit");
        exp["system"] = sys;
        exp["frozen_step"] = v.number(exp, path, "frozen_step", 0.05);
    } else if (sub == "average") {
        v.check_known_keys(exp, path, {"x", "mean", "grid", "gamma", "replicas", "burn_in",
                                       "spacing", "step", "horizon"});
        exp["x"] = v.number(exp, path, "x", 1.0);
        exp["mean"] = v.number(exp, path, "mean", 1.0);
        exp["gamma"] = v.number(exp, path, "gamma", -1.0);
        exp["replicas"] = v.integer(exp, path, "replicas", 200);
        exp["burn_in"] = v.number(exp, path, "burn_in", -1.0);
        exp["spacing"] = v.number(exp, path, "spacing", -1.0);
        exp["step"] = v.number(exp, path, "step", -1.0);
        exp["horizon"] = v.number(exp, path, "horizon", -1.0);
        if (exp.contains("grid") && !exp["grid"].is_array())
            v.fail(path + ".grid", "expected a list of [x, mean] pairs");
    } else if (sub == "poisson") {
        v.check_known_keys(exp, path,
                           {"x", "mean", "y", "gamma", "replicas", "phi_horizon", "step",
                            "derivative"});
        exp["x"] = v.number(exp, path, "x", 1.0);
        exp["mean"] = v.number(exp, path, "mean", 1.0);
        if (!exp.contains("y")) exp["y"] = json::array({2.0});
        else if (!exp["y"].is_array())
            v.fail(path + ".y", "expected a list of fast-state points");
        exp["gamma"] = v.number(exp, path, "gamma", -1.0);
        exp["replicas"] = v.integer(exp, path, "replicas", 2000);
        exp["phi_horizon"] = v.number(exp, path, "phi_horizon", -1.0);
        exp["step"] = v.number(exp, path, "step", -1.0);
        if (!exp.contains("derivative")) exp["derivative"] = false;
        else if (!exp["derivative"].is_boolean())
            v.fail(path + ".derivative", "expected a boolean");
    } else if (sub == "clt") {
        v.check_known_keys(exp, path, {"t_eval", "eps_list", "oracle_variance"});
        exp["t_eval"] = v.number(exp, path, "t_eval", 1.0);
        if (!exp.contains("eps_list")) exp["eps_list"] = json::array();
        else if (!exp["eps_list"].is_array())
            v.fail(path + ".eps_list", "expected a list of epsilon values");
        exp["oracle_variance"] = v.number(exp, path, "oracle_variance", -1.0);
    } else if (sub == "rate") {
        v.check_known_keys(exp, path, {"target", "grid_k", "tol", "rho_schedule"});
        exp["target"] = v.number(exp, path, "target", 2.0);
        exp["grid_k"] = v.integer(exp, path, "grid_k", 64);
        exp["tol"] = v.number(exp, path, "tol", -1.0);
        if (exp.contains("rho_schedule") && !exp["rho_schedule"].is_array())
            v.fail(path + ".rho_schedule", "expected a list of penalty weights");
        const auto k = exp["grid_k"].get<std::int64_t>();
        if (k < 16) v.fail(path + ".grid_k", "control grid needs at least 16 intervals");
    } else if (sub == "controlled") {
        v.check_known_keys(exp, path,
                           {"delta_list", "eps_rule", "eps_factor", "control_intervals",
                            "control_amplitude", "control_channel"});
        if (!exp.contains("delta_list")) exp["delta_list"] = json::array({0.1, 0.05, 0.02});
        else if (!exp["delta_list"].is_array())
            v.fail(path + ".delta_list", "expected a list of delta values");
        const std::string rule = v.text(exp, path, "eps_rule", "delta_sq");
        if (rule != "delta_sq" && rule != "scaled")
            v.fail(path + ".eps_rule", "must be delta_sq or scaled");
        exp["eps_rule"] = rule;
        exp["eps_factor"] = v.number(exp, path, "eps_factor", 0.01);
        exp["control_intervals"] = v.integer(exp, path, "control_intervals", 32);
        exp["control_amplitude"] = v.number(exp, path, "control_amplitude", 1.0);
        exp["control_channel"] = v.integer(exp, path, "control_channel", 0);
    } else if (sub == "probe") {
        v.check_known_keys(exp, path, {"samples", "box"});
        exp["samples"] = v.integer(exp, path, "samples", 1000);
        exp["box"] = v.number(exp, path, "box", 2.0);
        if (exp["samples"].get<std::int64_t>() < 100)
            v.fail(path + ".samples", "probe needs at least 100 samples");
    }
}

}  // namespace

std::shared_ptr<const model::CoefficientSet> RunConfig::make_model() const {
    if (model_name == "linear") return model::linear_model(linear);
    return model::convolution_model(convolution);
}

RunConfig parse_config(const std::string& text, const std::string& subcommand) {
    if (std::find(kSubcommands.begin(), kSubcommands.end(), subcommand) == kSubcommands.end())
        throw ConfigError("unknown subcommand: " + subcommand);

    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config root must be an object");

    Validator v;
    RunConfig cfg;

    v.check_known_keys(doc, "config", {"model", "sim", "experiment", "output"});

    // --- model --------------------------------------------------------------
    json model_obj = doc.value("model", json::object());
    if (!model_obj.is_object()) {
        v.fail("model", "expected an object");
        model_obj = json::object();
    }
    v.check_known_keys(model_obj, "model", {"name", "params"});
    cfg.model_name = v.text(model_obj, "model", "name", "linear");
    if (cfg.model_name != "linear" && cfg.model_name != "convolution")
        v.fail("model.name", "must be linear or convolution");
    json params = model_obj.value("params", json::object());
    if (!params.is_object()) {
        v.fail("model.params", "expected an object");
        params = json::object();
    }
    if (cfg.model_name == "linear") {
        v.check_known_keys(params, "model.params",
                           {"a1", "a2", "a3", "c1", "c2", "sigma0", "g0"});
        cfg.linear.a1 = v.number(params, "model.params", "a1", cfg.linear.a1);
        cfg.linear.a2 = v.number(params, "model.params", "a2", cfg.linear.a2);
        cfg.linear.a3 = v.number(params, "model.params", "a3", cfg.linear.a3);
        cfg.linear.c1 = v.number(params, "model.params", "c1", cfg.linear.c1);
        cfg.linear.c2 = v.number(params, "model.params", "c2", cfg.linear.c2);
        cfg.linear.sigma0 = v.number(params, "model.params", "sigma0", cfg.linear.sigma0);
        cfg.linear.g0 = v.number(params, "model.params", "g0", cfg.linear.g0);
    } else if (cfg.model_name == "convolution") {
        v.check_known_keys(params, "model.params",
                           {"ab", "by", "cf", "kappa", "g0", "gy", "sigma0"});
        cfg.convolution.ab = v.number(params, "model.params", "ab", cfg.convolution.ab);
        cfg.convolution.by = v.number(params, "model.params", "by", cfg.convolution.by);
        cfg.convolution.cf = v.number(params, "model.params", "cf", cfg.convolution.cf);
        cfg.convolution.kappa = v.number(params, "model.params", "kappa", cfg.convolution.kappa);
        cfg.convolution.g0 = v.number(params, "model.params", "g0", cfg.convolution.g0);
        cfg.convolution.gy = v.number(params, "model.params", "gy", cfg.convolution.gy);
        cfg.convolution.sigma0 =
            v.number(params, "model.params", "sigma0", cfg.convolution.sigma0);
    }

    // --- sim ------------------------------------------------------------------
    json sim_obj = doc.value("sim", json::object());
    if (!sim_obj.is_object()) {
        v.fail("sim", "expected an object");
        sim_obj = json::object();
    }
    v.check_known_keys(sim_obj, "sim",
                       {"epsilon", "delta", "dt_ratio", "horizon", "particles", "replicas",
                        "seed", "macro_dt", "sample_points", "workers", "x0", "y0",
                        "init_spread_x", "init_spread_y"});
    cfg.sim.epsilon = v.number(sim_obj, "sim", "epsilon", cfg.sim.epsilon);
    cfg.sim.delta = v.number(sim_obj, "sim", "delta", cfg.sim.delta);
    cfg.sim.dt_ratio = v.number(sim_obj, "sim", "dt_ratio", cfg.sim.dt_ratio);
    cfg.sim.horizon = v.number(sim_obj, "sim", "horizon", cfg.sim.horizon);
    cfg.sim.particles =
        static_cast<int>(v.integer(sim_obj, "sim", "particles", cfg.sim.particles));
    cfg.sim.replicas = static_cast<int>(v.integer(sim_obj, "sim", "replicas", cfg.sim.replicas));
    cfg.sim.seed = static_cast<std::uint64_t>(
        v.integer(sim_obj, "sim", "seed", static_cast<std::int64_t>(kDefaultSeed)));
    cfg.sim.macro_dt = v.number(sim_obj, "sim", "macro_dt", cfg.sim.macro_dt);
    cfg.sim.sample_points =
        static_cast<int>(v.integer(sim_obj, "sim", "sample_points", cfg.sim.sample_points));
    cfg.sim.workers = static_cast<int>(v.integer(sim_obj, "sim", "workers", 0));
    cfg.sim.init_spread_x = v.number(sim_obj, "sim", "init_spread_x", 0.0);
    cfg.sim.init_spread_y = v.number(sim_obj, "sim", "init_spread_y", 0.0);
    cfg.x0 = v.number_list(sim_obj, "sim", "x0", cfg.x0);
    cfg.y0 = v.number_list(sim_obj, "sim", "y0", cfg.y0);

    if (!(cfg.sim.epsilon > 0.0)) v.fail("sim.epsilon", "must be > 0");
    if (!(cfg.sim.delta > 0.0 && cfg.sim.delta <= 1.0)) v.fail("sim.delta", "must be in (0, 1]");
    if (!(cfg.sim.dt_ratio > 0.0)) v.fail("sim.dt_ratio", "must be > 0");
    if (!(cfg.sim.horizon > 0.0)) v.fail("sim.horizon", "must be > 0");
    if (cfg.sim.particles < 1) v.fail("sim.particles", "must be >= 1");
    if (cfg.sim.replicas < 1) v.fail("sim.replicas", "must be >= 1");

    // --- experiment ------------------------------------------------------------
    cfg.experiment = doc.value("experiment", json::object());
    if (!cfg.experiment.is_object()) {
        v.fail("experiment", "expected an object");
        cfg.experiment = json::object();
    }
    validate_experiment(v, cfg.experiment, subcommand);

    // --- output ----------------------------------------------------------------
    json out_obj = doc.value("output", json::object());
    if (!out_obj.is_object()) {
        v.fail("output", "expected an object");
        out_obj = json::object();
    }
    v.check_known_keys(out_obj, "output", {"directory", "formats"});
    cfg.output_dir = v.text(out_obj, "output", "directory", cfg.output_dir);
    if (out_obj.contains("formats")) {
        if (!out_obj["formats"].is_array()) {
            v.fail("output.formats", "expected a list");
        } else {
            cfg.formats.clear();
            for (const auto& f : out_obj["formats"]) {
                if (!f.is_string() || f.get<std::string>() != "csv")
                    v.fail("output.formats", "only csv is supported");
                else
                    cfg.formats.push_back("csv");
            }
        }
    }

    // scale-condition advisory for the small-noise experiments
    if ((subcommand == "rate" || subcommand == "controlled") && sim_obj.contains("delta")) {
        const double ratio = cfg.sim.epsilon / cfg.sim.delta;
        if (ratio > 0.1) {
            std::ostringstream os;
            os << "sim: the small-noise regime needs the scale condition epsilon/delta -> 0; "
               << "epsilon/delta = " << ratio << " is too large for the asymptotics to apply";
            cfg.warnings.push_back(os.str());
        }
    }

    if (!v.errors.empty()) {
        std::ostringstream os;
        os << "invalid config (" << v.errors.size() << " problem"
           << (v.errors.size() == 1 ? "" : "s") << "):";
        for (const auto& e : v.errors) os << "\n  " << e;
        throw ConfigError(os.str());
    }
    return cfg;
}

}  // namespace mvscale::cli
