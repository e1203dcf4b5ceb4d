#pragma once

#include <stdexcept>
#include <string>

namespace moelab {

/// Failure categories. The CLI maps each onto a process exit code.
enum class ErrorKind {
    Config,     // invalid configuration or schedule
    Input,      // malformed or out-of-range user data
    Dimension,  // tensor shape mismatch
    Numerical,  // non-finite values
    Contract,   // API misuse (e.g. backward on a non-scalar)
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error(ErrorKind::Config, w) {}
};
struct InputError : Error {
    explicit InputError(const std::string& w) : Error(ErrorKind::Input, w) {}
};
struct DimensionError : Error {
    explicit DimensionError(const std::string& w) : Error(ErrorKind::Dimension, w) {}
};
struct NumericalError : Error {
    explicit NumericalError(const std::string& w) : Error(ErrorKind::Numerical, w) {}
};
struct ContractError : Error {
    explicit ContractError(const std::string& w) : Error(ErrorKind::Contract, w) {}
};

const char* to_string(ErrorKind kind) noexcept;

}  // namespace moelab
