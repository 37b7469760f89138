#pragma once

#include <stdexcept>
#include <string>

namespace xcd {

/// Malformed input data: bad rows, dangling references, broken invariants.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller violated a precondition (bad dimensions, bad arguments).
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Training produced a non-finite loss or parameter.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace xcd
