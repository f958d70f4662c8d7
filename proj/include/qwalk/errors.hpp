#pragma once

#include <stdexcept>
#include <string>

namespace qwalk {

/// Invalid geometry, coin parameters, run configuration or input file.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Dimension mismatches, non-converged eigensolvers, broken normalization.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace qwalk
