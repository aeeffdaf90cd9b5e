#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hsi {

/// Invalid experiment configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Unreadable or inconsistent input data (CLI exit code 3).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Loss became non-finite during optimization (CLI exit code 4).
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, std::size_t iteration)
        : std::runtime_error(what + " at iteration " + std::to_string(iteration)), iteration_(iteration) {}

    [[nodiscard]] std::size_t iteration() const noexcept { return iteration_; }

private:
    std::size_t iteration_;
};

/// Checkpoint incompatible with the configuration (CLI exit code 5).
class CheckpointMismatch : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace hsi
