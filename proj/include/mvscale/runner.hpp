#pragma once

#include <string>
#include <vector>

#include "mvscale/config.hpp"

namespace mvscale::cli {

struct Check {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct RunReport {
    int exit_code = 0;  // 0 iff every check passed and no error occurred
    std::vector<Check> checks;
    std::vector<std::string> files;
    std::string error;  // non-empty on failure
};

// Executes a subcommand: writes the CSV artifacts, a run manifest
// (manifest.json: config echo, version, seed, checks) and returns the
// pass/fail summary. Never throws; failures land in the report.
RunReport run(const std::string& subcommand, const RunConfig& cfg);

// Convenience: parse + run, mapping config errors into the report.
RunReport run_from_text(const std::string& subcommand, const std::string& config_text);

}  // namespace mvscale::cli
