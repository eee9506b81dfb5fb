#ifndef UVQ_ERRORS_HPP
#define UVQ_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace uvq {

// Bad parameters or command-line usage. CLI exit code 2.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed files, shape mismatches, missing inputs. CLI exit code 3.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Divergence, non-finite losses. CLI exit code 4.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse, e.g. backward without a recorded forward.
struct StateError : std::logic_error {
    explicit StateError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace uvq

#endif
