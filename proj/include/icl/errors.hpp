#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace icl {

/// Precondition violated by a caller-supplied value.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A file on disk does not follow the expected layout.
class FormatError : public std::runtime_error {
public:
    FormatError(std::string path, const std::string& what)
        : std::runtime_error(path + ": " + what), path_(std::move(path)) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

/// Malformed or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// SGD left the stable region (some parameter norm exceeded the guard).
class DivergenceError : public std::runtime_error {
public:
    explicit DivergenceError(std::int64_t step)
        : std::runtime_error("training diverged at step " + std::to_string(step)), step_(step) {}
    std::int64_t step() const noexcept { return step_; }

private:
    std::int64_t step_;
};

/// Adaptive ODE integration could not make progress.
class IntegrationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace icl
