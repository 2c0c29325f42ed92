#pragma once

#include <stdexcept>
#include <string>

namespace meshreg {

/// Base class for all meshreg errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid arguments, configuration, or shape mismatches. CLI exit code 2.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Malformed files or geometrically unusable input data. CLI exit code 3.
class DataError : public Error {
public:
    using Error::Error;
};

/// Numerical failure inside a solver or registration stage. CLI exit code 4.
class SolverError : public Error {
public:
    using Error::Error;
};

} // namespace meshreg
