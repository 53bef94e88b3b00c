#pragma once

#include <stdexcept>
#include <string>

namespace nucav {

/// Malformed or physically invalid input (files, parameters). CLI exit code 3.
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

/// Numerical failure inside an engine (singular system, non-finite value). CLI exit code 4.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// Calibration failure (non-convergence, undetectable modes, flat objective). CLI exit code 5.
class FitError : public std::runtime_error {
public:
    explicit FitError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace nucav
