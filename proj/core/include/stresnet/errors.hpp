#pragma once

#include <stdexcept>
#include <string>

namespace stresnet {

/// Base class for all library failures.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An operation precondition was violated (shape, channel or bounds mismatch).
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// A file is malformed, truncated, or has an unexpected layout.
class FormatError : public Error {
public:
    using Error::Error;
};

/// A run configuration cannot be satisfied (e.g. dataset smaller than one batch).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Underlying I/O failed (missing file, short read, failed write).
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace stresnet
