#pragma once

#include <stdexcept>
#include <string>

namespace salcl {

// Invalid experiment configuration or schema violation. The CLI maps this
// to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Contract violation at an operation boundary (bad shape, label outside the
// head, unknown layer name, ...).
class ValueError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Filesystem or serialization failure.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw ValueError(msg);
}

inline void check_config(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

} // namespace salcl
