#pragma once

#include <stdexcept>
#include <string>

namespace fire2 {

/// Invalid configuration. CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Unrecoverable runtime failure (non-finite loss, corrupt checkpoint).
/// CLI maps this to exit code 3.
struct RuntimeAbort : std::runtime_error {
    explicit RuntimeAbort(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace fire2
