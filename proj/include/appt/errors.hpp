#pragma once

#include <stdexcept>
#include <string>

namespace appt {

// Error taxonomy maps onto process exit codes:
//   ContractError / NumericError / IntegrityError / ParseError -> 1
//   ConfigError -> 2, IoError -> 3
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Violated precondition or shape/contract mismatch.
struct ContractError : Error {
    using Error::Error;
};

// Non-finite value produced by a numeric operation.
struct NumericError : Error {
    using Error::Error;
};

// A frozen parameter changed, or a parameter escaped the partition.
struct IntegrityError : Error {
    using Error::Error;
};

// Malformed input file (point cloud, manifest, checkpoint).
struct ParseError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

} // namespace appt
