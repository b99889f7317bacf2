#pragma once

#include <stdexcept>
#include <string>

namespace semcodec {

// Malformed or inconsistent file/stream contents (bad magic, truncation,
// corrupt payloads). The CLI maps these to exit code 2.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Range decoder hit the end of its input or an impossible code value.
class DecodeError : public FormatError {
public:
    using FormatError::FormatError;
};

// Tensor/feature dimensions that do not compose.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A NaN/Inf showed up where only finite values are allowed.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad command line usage (missing flag, conflicting options). Exit code 1.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace semcodec
