#pragma once

#include <stdexcept>
#include <string>

namespace fcc {

// Base for everything thrown by the library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shapes do not conform to an operation's contract.
struct DimensionError : Error {
    using Error::Error;
};

// NaN/Inf appeared where finite values are required.
struct NumericError : Error {
    using Error::Error;
};

// A precondition on arguments or call sequencing was violated.
struct ContractError : Error {
    using Error::Error;
};

// Invalid or inconsistent configuration (modes, tables, taxonomies).
struct ConfigError : Error {
    using Error::Error;
};

// Malformed input file contents (reports line/row when known).
struct ParseError : Error {
    using Error::Error;
};

// Structurally valid input that violates a data invariant.
struct ValidationError : Error {
    using Error::Error;
};

// Unreadable, unwritable or truncated files.
struct IoError : Error {
    using Error::Error;
};

// Checkpoint container is not what it claims to be.
struct FormatError : Error {
    using Error::Error;
};

// Batch sampling cannot satisfy its contract (e.g. no negative exists).
struct SamplingError : Error {
    using Error::Error;
};

// Split request cannot be honored by the corpus at hand.
struct SplitError : Error {
    using Error::Error;
};

}  // namespace fcc
