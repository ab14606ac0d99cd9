#pragma once

#include <stdexcept>
#include <string>

namespace gss {

// Malformed input file (PLY header/body, config JSON).
class ParseError : public std::runtime_error {
public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// Violated configuration contract; CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A runtime invariant check failed (verify mode); CLI maps this to exit code 3.
class InvariantViolation : public std::logic_error {
public:
  explicit InvariantViolation(const std::string& what) : std::logic_error(what) {}
};

}  // namespace gss
