#pragma once

#include <stdexcept>
#include <string>

namespace eitphys {

// Shape/dimension violations (mismatched axes, illegal conv geometry, ...).
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// API misuse: backward on a non-scalar, double backward, length mismatch, ...
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad experiment/model configuration (maps to CLI exit code 2).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required (maps to CLI exit code 3).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Cross-correlation alignment failed for every candidate lag.
struct AlignError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace eitphys
