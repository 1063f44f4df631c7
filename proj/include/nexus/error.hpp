#pragma once

#include <stdexcept>
#include <string>

namespace nexus {

// Exception hierarchy. The CLI maps each kind onto its exit code.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or invalid input (exit 2).
struct InputError : Error {
    using Error::Error;
};

// A precondition on data content failed (too few rows, missing coverage).
struct DataError : Error {
    using Error::Error;
};

// An upstream artifact is missing (exit 4).
struct PrerequisiteError : Error {
    using Error::Error;
};

// Internal numeric failure (exit 5).
struct NumericError : Error {
    using Error::Error;
};

}  // namespace nexus
