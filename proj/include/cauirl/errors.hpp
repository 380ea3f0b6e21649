#pragma once

#include <stdexcept>
#include <string>

namespace cauirl {

// Input-side failures (malformed files, bad config values). The CLI maps
// these to exit code 2.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string &msg) : std::runtime_error(msg) {}
};

struct ConsistencyError : std::runtime_error {
    explicit ConsistencyError(const std::string &msg) : std::runtime_error(msg) {}
};

struct CapacityError : std::runtime_error {
    explicit CapacityError(const std::string &msg) : std::runtime_error(msg) {}
};

struct ParameterError : std::runtime_error {
    explicit ParameterError(const std::string &msg) : std::runtime_error(msg) {}
};

// Layer/shape wiring mistakes (input width does not match what a layer or
// network was built for).
struct ArchitectureError : std::runtime_error {
    explicit ArchitectureError(const std::string &msg) : std::runtime_error(msg) {}
};

// Runtime numeric failures (non-finite activations/gradients, failed
// decompositions). The CLI maps these to exit code 3.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string &msg) : std::runtime_error(msg) {}
};

} // namespace cauirl
