#pragma once

#include <stdexcept>
#include <string>

namespace omni {

// Error taxonomy shared by every module. All failures carry a message that
// names the offending values; callers catch by category.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shapes that cannot be combined (matmul inner dims, axis ranges).
struct DimensionError : Error {
    using Error::Error;
};

// Malformed or out-of-range caller input (images too small, frame caps,
// chunk caps, unknown stage ids).
struct InputError : Error {
    using Error::Error;
};

// Inconsistent wiring between components (connector width vs feature width,
// unknown parameter group, unknown config key).
struct ConfigError : Error {
    using Error::Error;
};

// Token sequence exceeds its budget; message reports required vs available.
struct BudgetError : Error {
    using Error::Error;
};

// Non-finite value reached a place that requires finite numerics.
struct NumericError : Error {
    using Error::Error;
};

// Data-forge pipeline failure carrying enough detail to debug the record.
struct PipelineError : Error {
    using Error::Error;
};

// File parsing / serialization failure.
struct IoError : Error {
    using Error::Error;
};

}  // namespace omni
