#pragma once

#include <stdexcept>
#include <string>

namespace dh {

/// Invalid configuration, file schema violation or inconsistent inputs.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training diverged (penalty estimate blew past the abort threshold).
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A referenced data file is missing or unreadable.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace dh
