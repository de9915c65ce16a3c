#pragma once

#include <stdexcept>
#include <string>

namespace atlascut {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or unreadable file (bad sidecar, unknown dtype, ...).
struct FormatError : Error {
    using Error::Error;
};

// File contents inconsistent with their own metadata (payload length, ...).
struct IntegrityError : Error {
    using Error::Error;
};

// Input violates a precondition in a recoverable way (constant slice,
// degenerate ROI). Callers typically skip the offending slice.
struct DegenerateInputError : Error {
    using Error::Error;
};

struct IndexError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// Optimizer hit a non-finite objective or otherwise had to abort.
struct OptimizerError : Error {
    using Error::Error;
};

}  // namespace atlascut
