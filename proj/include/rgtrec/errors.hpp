#pragma once

#include <stdexcept>

namespace rgtrec {

// Bad or missing input data (exit code 1 at the command line).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid hyperparameters or configuration (exit code 2).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace rgtrec
