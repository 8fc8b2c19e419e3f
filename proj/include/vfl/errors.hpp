#pragma once

#include <stdexcept>
#include <string>

namespace vfl {

// Bad configuration (invalid dims, fractions, hyperparameters). CLI exit 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad input data (labels out of range, malformed CSV, empty splits). CLI exit 3.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dimension mismatch between tensors or model stages. CLI exit 1.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem failure (unreadable/unwritable artifact). CLI exit 1.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace vfl
