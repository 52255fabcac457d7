#pragma once

#include <stdexcept>
#include <string>

namespace atcn {

// Error taxonomy. Config/shape problems are caller mistakes and should be
// caught before any compute runs; state errors are lifecycle misuse; parse and
// io errors carry file context in the message.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : ConfigError {
    using ConfigError::ConfigError;
};

struct WindowTooShortError : ShapeError {
    using ShapeError::ShapeError;
};

struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct AlignmentError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training blew up (non-finite loss or gradient); message names the culprit.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

inline void require_shape(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

} // namespace atcn
