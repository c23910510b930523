#pragma once

#include <stdexcept>
#include <string>

namespace covnat {

// Categories map onto CLI exit codes: ConfigError -> 2, DataError -> 3,
// NumericError -> 4. Contract violations (programming errors at call sites)
// use ContractError and also exit with 3 when they escape a command.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ContractError : std::logic_error {
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

struct ShapeError : ContractError {
    explicit ShapeError(const std::string& msg) : ContractError(msg) {}
};

}  // namespace covnat
