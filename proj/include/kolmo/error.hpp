#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kolmo {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A tape node produced a non-finite value.
class NumericalError : public Error {
public:
    NumericalError(std::size_t node, const std::string& op)
        : Error("non-finite value at tape node " + std::to_string(node) + " (" + op + ")"),
          node_(node), op_(op) {}

    std::size_t node() const noexcept { return node_; }
    const std::string& op() const noexcept { return op_; }

private:
    std::size_t node_;
    std::string op_;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

/// An Euler-Maruyama path left the admissible state region.
class SimulationDiverged : public Error {
public:
    SimulationDiverged(std::size_t sample, std::size_t step)
        : Error("simulation diverged for sample " + std::to_string(sample) + " at time index " +
                std::to_string(step)),
          sample_(sample), step_(step) {}

    std::size_t sample() const noexcept { return sample_; }
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t sample_;
    std::size_t step_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

/// Two-pass replay produced a batch that differs from the first pass.
class ConsistencyError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace kolmo
