#pragma once

#include <stdexcept>
#include <string>

namespace loco {

// Dimension mismatch between operands.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Precondition on a scalar or index argument violated.
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Factorization or solve failed (non-SPD input, singular system).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// File could not be read or written, or its contents are malformed.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace loco
