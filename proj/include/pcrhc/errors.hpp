#ifndef PCRHC_ERRORS_HPP_
#define PCRHC_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace pcrhc {

/// Invalid or inconsistent user-supplied configuration.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Argument outside the mathematical domain of an operation.
struct DomainError : std::domain_error {
  explicit DomainError(const std::string& msg) : std::domain_error(msg) {}
};

/// Integer overflow in a combinatorial quantity.
struct OverflowError : std::overflow_error {
  explicit OverflowError(const std::string& msg) : std::overflow_error(msg) {}
};

/// A numeric routine failed to reach its accuracy contract.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Riccati / terminal-controller synthesis failure.
struct SynthesisError : std::runtime_error {
  explicit SynthesisError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A nonconvex quadratic form was supplied where convexity is required.
struct ConvexityError : std::runtime_error {
  explicit ConvexityError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Requested computation exceeds a configured combinatorial cap.
struct LimitError : std::runtime_error {
  explicit LimitError(const std::string& msg) : std::runtime_error(msg) {}
};

/// The initial state violates a state constraint at k = 0.
struct InfeasibleInitialError : std::runtime_error {
  explicit InfeasibleInitialError(const std::string& msg)
      : std::runtime_error(msg) {}
};

}  // namespace pcrhc

#endif  // PCRHC_ERRORS_HPP_
