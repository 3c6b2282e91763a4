#pragma once

#include <stdexcept>
#include <string>

namespace spanret {

// Bad inputs: malformed files, inconsistent datasets, invalid spans.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric breakdown: non-finite losses or scores.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace spanret
