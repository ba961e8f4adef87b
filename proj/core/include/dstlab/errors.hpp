#pragma once

#include <stdexcept>
#include <string>

namespace dstlab {

// Malformed data: ontology violations, out-of-range indices, bad label sets.
struct SchemaError : std::runtime_error {
    explicit SchemaError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user-facing configuration (CLI exit code 1).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A pipeline stage was invoked before its upstream stage ran (CLI exit code 2).
struct StageDependencyError : std::runtime_error {
    explicit StageDependencyError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN losses, failed gradient checks, diverged optimizers (CLI exit code 3).
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape mismatches. Programming errors rather than data errors.
struct ShapeError : std::logic_error {
    explicit ShapeError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace dstlab
