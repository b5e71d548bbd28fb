#pragma once
#include <stdexcept>
#include <string>

namespace tblab {

/// Bad user input: malformed JSON, out-of-range parameters, inconsistent
/// dimensions.  CLI maps this to exit code 1.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// A cube average of the test function b fell below the working floor, so a
/// twisted expectation would divide by (numerically) zero.
struct AccretivityViolation : std::runtime_error {
  explicit AccretivityViolation(const std::string& what) : std::runtime_error(what) {}
};

/// The greedy subcube ordering could not find a child whose removal keeps the
/// running integral above the required tail bound (only possible when the
/// declared accretivity lower bound does not actually hold for the data).
struct NoValidChild : std::runtime_error {
  explicit NoValidChild(const std::string& what) : std::runtime_error(what) {}
};

} // namespace tblab
