#ifndef PMNET_ERRORS_HPP
#define PMNET_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace pmnet {

// Maps to CLI exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Maps to CLI exit code 3. Always names the offending file.
struct DataFormatError : std::runtime_error {
    explicit DataFormatError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pmnet

#endif  // PMNET_ERRORS_HPP
