#pragma once

#include <stdexcept>
#include <string>

namespace tensordg {

/// Shapes or lengths that do not line up.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Index or mode outside its valid range.
class RangeError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// A matrix that must be inverted is singular or too ill-conditioned.
class ConditioningError : public std::runtime_error {
public:
    ConditioningError(const std::string& what, double condition)
        : std::runtime_error(what), condition_(condition) {}

    double condition() const noexcept { return condition_; }

private:
    double condition_;
};

/// Iterative solver stopped before meeting its tolerance.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, double residual)
        : std::runtime_error(what), residual_(residual) {}

    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

/// Invalid configuration, pattern declaration or input file.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace tensordg
