#pragma once

#include <stdexcept>
#include <string>

namespace cytopipe {

// Bad input or parameters. The CLI maps these to exit code 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidParameter : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class InvalidAnnotation : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// Malformed file contents (DMAP, CSV, PNG).
class FormatError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// Failures outside the caller's control. The CLI maps these to exit code 2.
class RuntimeFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Adapter did not produce output (missing file, nonzero exit, timeout).
class AdapterError : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};

// Adapter produced output that violates its contract.
class ProtocolError : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};

}  // namespace cytopipe
