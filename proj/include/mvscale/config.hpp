#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvscale/model.hpp"
#include "mvscale/sim.hpp"

namespace mvscale::cli {

using json = nlohmann::json;

inline const std::vector<std::string> kSubcommands = {
    "simulate", "average", "poisson", "clt", "rate", "controlled", "probe"};

struct RunConfig {
    std::string model_name = "linear";
    model::LinearModelParams linear;
    model::ConvolutionModelParams convolution;
    sim::SimConfig sim;
    Vec x0{1.0};
    Vec y0{0.75};
    json experiment;  // subcommand block with defaults filled
    std::string output_dir = "out";
    std::vector<std::string> formats{"csv"};
    std::vector<std::string> warnings;

    std::shared_ptr<const model::CoefficientSet> make_model() const;
    bool is_linear() const { return model_name == "linear"; }
};

// Parses and validates a config document for the given subcommand. Every
// violation is collected and reported at once (ConfigError message carries
// one line per problem, each naming its section.key path). Unknown keys are
// rejected; missing keys fall back to documented defaults.
RunConfig parse_config(const std::string& text, const std::string& subcommand);

}  // namespace mvscale::cli
