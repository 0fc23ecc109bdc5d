#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace posediff {

// Error hierarchy. CLI maps these to exit codes: FormatError -> 2,
// Degenerate* -> 3, everything else -> 3 unless it is a usage problem.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
    using Error::Error;
};

struct ContractError : Error {
    using Error::Error;
};

struct EmptyInputError : Error {
    using Error::Error;
};

struct DegenerateInputError : Error {
    using Error::Error;
};

struct DegenerateViewError : Error {
    using Error::Error;
};

struct AggregationDegenerateError : Error {
    using Error::Error;
};

struct FormatError : Error {
    using Error::Error;
};

// Worker count for data-parallel evaluation loops. PDL_THREADS overrides.
int worker_count();

}  // namespace posediff
