#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvscale {

using Vec = std::vector<double>;

// Default config seed when none is given.
inline constexpr std::uint64_t kDefaultSeed = 0x5EED;

// Any state coordinate beyond this magnitude counts as a blow-up.
inline constexpr double kDivergenceThreshold = 1e8;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed inputs: dimension mismatches, bad weights, inconsistent shapes.
class StructuralError : public Error {
public:
    using Error::Error;
};

// Bad run configuration (validation failures, unstable step sizes).
class ConfigError : public Error {
public:
    using Error::Error;
};

// A model coefficient returned a non-finite value.
class ModelError : public Error {
public:
    using Error::Error;
};

// Trajectory left the admissible region; carries the first bad time.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, double first_bad_time)
        : Error(what), first_bad_time(first_bad_time) {}
    double first_bad_time = 0.0;
};

// A standing assumption failed a runtime check (e.g. non-positive
// dissipativity margin).
class AssumptionError : public Error {
public:
    using Error::Error;
};

// An estimator produced an internally inconsistent result.
class EstimationError : public Error {
public:
    using Error::Error;
};

// The control optimizer did not converge; carries its trace.
class OptimizationError : public Error {
public:
    OptimizationError(const std::string& what, std::string trace)
        : Error(what), trace(std::move(trace)) {}
    std::string trace;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw StructuralError(msg);
}

}  // namespace mvscale
