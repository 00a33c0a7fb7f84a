#pragma once

#include <stdexcept>
#include <string>

namespace fluoroforge {

/// File or stream level failure (missing file, bad PNG, unwritable path).
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Shape mismatch between images, stacks, tiles or priors.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace fluoroforge
