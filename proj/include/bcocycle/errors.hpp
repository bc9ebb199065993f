#pragma once

#include <stdexcept>
#include <string>

namespace bcocycle {

// Argument outside the domain of an operation (pole proximity, |x| >= R, ...).
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

// No admissible annulus parameter, or a map that does not contract D_R.
struct InfeasibilityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConvergenceError : InfeasibilityError {
    using InfeasibilityError::InfeasibilityError;
};

struct AssemblyError : InfeasibilityError {
    using InfeasibilityError::InfeasibilityError;
};

struct AccuracyError : InfeasibilityError {
    using InfeasibilityError::InfeasibilityError;
};

// Fast and slow spaces numerically intersect.
struct TransversalityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace bcocycle
