#pragma once

#include <limits>
#include <stdexcept>
#include <string>

namespace gear {

/// Operand extents disagree with what an operation requires.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed contraction string, layer list, or similar structural description.
class SpecError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Matrix is numerically singular. Carries the 1-norm condition estimate
/// (infinity when a pivot vanished outright).
class SingularityError : public std::runtime_error {
public:
    SingularityError(const std::string& what, double condition)
        : std::runtime_error(what), condition_(condition) {}

    [[nodiscard]] double condition() const noexcept { return condition_; }

private:
    double condition_ = std::numeric_limits<double>::infinity();
};

/// A function handed to a numeric routine produced a non-finite value.
class EvaluationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite loss or gradient during training. `component` names the loss
/// term that went bad first.
class TrainingError : public std::runtime_error {
public:
    TrainingError(const std::string& what, std::string component)
        : std::runtime_error(what), component_(std::move(component)) {}

    [[nodiscard]] const std::string& component() const noexcept { return component_; }

private:
    std::string component_;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dataset text could not be parsed. `line` is 1-based; 0 means "whole file".
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error(what), line_(line) {}

    [[nodiscard]] std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_ = 0;
};

}  // namespace gear
