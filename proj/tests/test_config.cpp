#include <doctest.h>

#include "mvscale/config.hpp"

using namespace mvscale;
using cli::parse_config;

TEST_CASE("minimal config fills documented defaults") {
    const auto cfg = parse_config("{}", "simulate");
    CHECK(cfg.model_name == "linear");
    CHECK(cfg.sim.seed == 0x5EED);
    CHECK(cfg.sim.dt_ratio == 0.05);
    CHECK(cfg.experiment["system"] == "slowfast");
    CHECK(cfg.output_dir == "out");
    CHECK(cfg.warnings.empty());
}

TEST_CASE("negative epsilon is reported with its section path") {
    try {
        parse_config(R"({"sim": {"epsilon": -1}})", "simulate");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("sim.epsilon") != std::string::npos);
    }
}

TEST_CASE("unknown keys are rejected with their location") {
    try {
        parse_config(R"({"sim": {"epsilonn": 0.1}, "modle": {}})", "simulate");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("sim.epsilonn") != std::string::npos);
        CHECK(msg.find("config.modle") != std::string::npos);
    }
}

TEST_CASE("all problems are reported at once") {
    try {
        parse_config(R"({"sim": {"epsilon": -1, "particles": 0, "junk": 3}})", "simulate");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("sim.epsilon") != std::string::npos);
        CHECK(msg.find("sim.particles") != std::string::npos);
        CHECK(msg.find("sim.junk") != std::string::npos);
        CHECK(msg.find("3 problems") != std::string::npos);
    }
}

TEST_CASE("scale-condition advisory fires for the small-noise experiments") {
    const auto cfg =
        parse_config(R"({"sim": {"epsilon": 0.05, "delta": 0.1}})", "rate");
    REQUIRE(cfg.warnings.size() == 1);
    CHECK(cfg.warnings[0].find("scale condition") != std::string::npos);
    CHECK(cfg.warnings[0].find("0.5") != std::string::npos);

    // no delta key, no advisory
    const auto quiet = parse_config(R"({"sim": {"epsilon": 0.05}})", "rate");
    CHECK(quiet.warnings.empty());

    // well-separated scales stay quiet
    const auto ok =
        parse_config(R"({"sim": {"epsilon": 0.001, "delta": 0.1}})", "rate");
    CHECK(ok.warnings.empty());
}

TEST_CASE("model parameters flow through") {
    const auto cfg = parse_config(
        R"({"model": {"name": "linear", "params": {"a1": -2.0, "g0": 1.5}}})", "probe");
    CHECK(cfg.linear.a1 == -2.0);
    CHECK(cfg.linear.g0 == 1.5);
    CHECK(cfg.linear.a2 == 0.5);  // untouched default
    CHECK(cfg.make_model()->has_analytic_oracle());

    const auto conv = parse_config(R"({"model": {"name": "convolution"}})", "probe");
    CHECK(!conv.make_model()->has_analytic_oracle());
}

TEST_CASE("experiment blocks are validated per subcommand") {
    CHECK_THROWS_AS(parse_config(R"({"experiment": {"grid_k": 8}})", "rate"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"experiment": {"target": 2.0}})", "simulate"),
                    ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"experiment": {"eps_rule": "inverse"}})", "controlled"),
                    ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"experiment": {"samples": 10}})", "probe"), ConfigError);
    CHECK_THROWS_AS(parse_config("{}", "nonsense"), ConfigError);

    const auto rate = parse_config(R"({"experiment": {"target": 2.5, "grid_k": 32}})", "rate");
    CHECK(rate.experiment["target"] == 2.5);
    CHECK(rate.experiment["tol"] == -1.0);
}

TEST_CASE("malformed json is one clear error") {
    CHECK_THROWS_AS(parse_config("{not json", "simulate"), ConfigError);
    CHECK_THROWS_AS(parse_config("[1,2,3]", "simulate"), ConfigError);
}
