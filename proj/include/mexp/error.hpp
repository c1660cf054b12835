#pragma once

#include <stdexcept>
#include <string>

namespace mexp {

/// Caller supplied something that violates a documented precondition.
/// The CLI maps this family to exit code 1.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ShapeError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Failure while executing an otherwise valid request (I/O, numerics).
/// The CLI maps this family to exit code 2.
class RuntimeFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace mexp
