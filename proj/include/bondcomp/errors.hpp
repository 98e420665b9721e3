#pragma once

#include <stdexcept>
#include <string>

namespace bondcomp {

// Invalid scenario configuration. Carries the offending field path.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::runtime_error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// A computation could not be carried out (divergent integral, singular system, ...).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Hedge system too ill-conditioned to solve at a given time step.
class NearSingularError : public NumericalError {
 public:
  NearSingularError(std::size_t step, double condition)
      : NumericalError("near-singular hedge system at step " + std::to_string(step) +
                       " (condition " + std::to_string(condition) + ")"),
        step_(step),
        condition_(condition) {}
  std::size_t step() const noexcept { return step_; }
  double condition() const noexcept { return condition_; }

 private:
  std::size_t step_;
  double condition_;
};

}  // namespace bondcomp
