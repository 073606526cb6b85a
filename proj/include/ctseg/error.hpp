#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ctseg {

enum class ErrorCode {
    invalid_argument,  // malformed input or violated precondition
    not_found,
    conflict,          // operation not allowed in the current state
    corrupt,           // stored artifact fails validation
    io,
    non_finite,        // numerical blow-up during training
};

std::string_view to_string(ErrorCode code);

/// Library-wide exception; every failure carries a machine-readable code.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace ctseg
