/// @file errors.hpp
/// @brief Exception hierarchy shared by every flowrl module.

#pragma once

#include <stdexcept>
#include <string>

namespace flowrl {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Array shapes or dimensions do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A value became NaN/Inf or otherwise left the representable domain.
class NumericError : public Error {
public:
    using Error::Error;
};

/// A configuration value is out of range or inconsistent.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Sampling or training produced a non-finite state.
class DivergenceError : public NumericError {
public:
    DivergenceError(const std::string& what, int step) : NumericError(what), step_(step) {}
    int step() const noexcept { return step_; }

private:
    int step_;
};

/// A Gaussian transition with zero standard deviation was asked for a density.
class DegenerateTransitionError : public NumericError {
public:
    using NumericError::NumericError;
};

/// Malformed or unreadable input files.
class DataError : public Error {
public:
    using Error::Error;
};

/// Failures talking to, or parsing replies from, a judge model.
class JudgeError : public Error {
public:
    enum class Kind { transport, malformed_json, missing_score, out_of_range };

    JudgeError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

}  // namespace flowrl
