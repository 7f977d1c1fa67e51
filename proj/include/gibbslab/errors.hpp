#pragma once

#include <stdexcept>
#include <string>

namespace gibbslab {

// State space or atom count too large to enumerate.
struct CapacityError : std::runtime_error {
  explicit CapacityError(const std::string& what) : std::runtime_error(what) {}
};

// Interaction or update range incompatible with the torus (wrap ambiguity).
struct GeometryError : std::runtime_error {
  explicit GeometryError(const std::string& what) : std::runtime_error(what) {}
};

// A numeric contract was violated (negative rate, non-stationary measure
// passed where stationarity is required, termwise sign failure, ...).
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

// Linear-algebra level failure (degenerate transfer matrix, zero marginal).
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Generator is reducible: stationary distribution not unique.
struct NonUniquenessError : std::runtime_error {
  explicit NonUniquenessError(const std::string& what) : std::runtime_error(what) {}
};

// Empirical estimate requested below the configured count floor.
struct InsufficientDataError : std::runtime_error {
  explicit InsufficientDataError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace gibbslab
