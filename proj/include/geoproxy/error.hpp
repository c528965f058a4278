#pragma once

#include <stdexcept>
#include <string>

namespace geoproxy {

// Validation failures (exit status 1 at the CLI boundary).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SchemaError : Error {
    using Error::Error;
};

struct CoverageError : Error {
    using Error::Error;
};

struct InputError : Error {
    using Error::Error;
};

struct NumericalError : Error {
    using Error::Error;
};

struct ProtocolError : Error {
    using Error::Error;
};

struct SpecError : Error {
    using Error::Error;
};

// Filesystem and stream failures (exit status 2).
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace geoproxy
