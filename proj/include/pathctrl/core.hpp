#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pathctrl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr const char* kVersion = "0.3.1";

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Two paths or a path and a time do not line up on a common uniform grid.
class GridMismatchError : public Error {
public:
    using Error::Error;
};

/// The perturbed volatility is singular (or the perturbation family is malformed).
class PerturbationError : public Error {
public:
    using Error::Error;
};

/// A volatility matrix could not be inverted where an inverse is required.
class SingularVolatilityError : public Error {
public:
    using Error::Error;
};

/// Violated precondition of an experiment or solver (ordering, bounds, dimension).
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Malformed experiment configuration. `field` names the offending key.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& what)
        : Error(field + ": " + what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

}  // namespace pathctrl
