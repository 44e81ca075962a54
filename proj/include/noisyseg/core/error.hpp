#pragma once

#include <stdexcept>
#include <string>

namespace noisyseg {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Two operands disagree on height/width/depth.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A value violates the invariant of its container (e.g. a soft label outside [0, 1]).
class ValueError : public Error {
public:
    using Error::Error;
};

/// A path could not be opened, read or written.
class IoError : public Error {
public:
    using Error::Error;
};

/// A file does not start with the expected magic bytes or is otherwise not in the expected format.
class FormatError : public Error {
public:
    using Error::Error;
};

/// A file header declares dims whose product does not match the payload length.
class PayloadError : public FormatError {
public:
    using FormatError::FormatError;
};

/// An invalid configuration (loss weights, plan, spec).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input data is inconsistent (missing volumes, mismatched ids, empty splits).
class DataError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    using Error::Error;
};

} // namespace noisyseg
