#pragma once

#include <stdexcept>
#include <string>

namespace neardgd {

struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed or invalid experiment configuration; carries the offending key path.
struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(what) {}
};

// A method produced nonfinite or runaway iterates.
struct DivergenceError : Error {
    DivergenceError(const std::string& method, long long iteration)
        : Error("divergence in method '" + method + "' at iteration " + std::to_string(iteration)),
          method_label(method),
          iteration(iteration) {}
    std::string method_label;
    long long iteration;
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error(what) {}
};

}  // namespace neardgd
