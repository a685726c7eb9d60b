#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace safectl {

// Precondition violated by an argument (bad range, mismatched shapes, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class IntegrationDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The fixed-point control map is not provably a contraction.
class NonContraction : public std::runtime_error {
 public:
  NonContraction(const std::string& what, double ratio)
      : std::runtime_error(what), ratio_(ratio) {}
  double ratio() const noexcept { return ratio_; }

 private:
  double ratio_;
};

class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : std::runtime_error(what + " at position " + std::to_string(position)),
        position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

// Malformed or unknown run-configuration entry.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline void require(bool condition, const char* message) {
  if (!condition) throw DomainError(message);
}
inline void require(bool condition, const std::string& message) {
  if (!condition) throw DomainError(message);
}
}  // namespace detail

}  // namespace safectl
