#pragma once

#include <stdexcept>
#include <string>

namespace dhr {

// Error taxonomy shared by every module. The C API maps each class onto a
// status code; the CLI maps status codes onto exit codes.

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class UsageError : public Error {
public:
    using Error::Error;
};

// Filesystem failures: missing files, unwritable paths.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace dhr
