#pragma once

#include <stdexcept>
#include <string>

namespace minstab {

/// Base of every error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed arguments: wrong dimensions, out-of-range indices, non-finite
/// entries, violated preconditions.
class InputError : public Error {
public:
    using Error::Error;
};

/// The requested quantity is mathematically undefined for the argument
/// (stable rank of a zero matrix, degenerate thresholds, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Malformed file contents.  `offset` is the byte position where parsing
/// stopped, or npos when not applicable.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t offset = std::string::npos)
        : Error(offset == std::string::npos ? what : what + " (byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// The brute-force oracle's pattern-count guard was exceeded.
class CapacityError : public Error {
public:
    using Error::Error;
};

/// No activation pattern produced a consistent interpolant.
class InfeasibilityError : public Error {
public:
    using Error::Error;
};

/// A dense solve failed even after ridge regularisation.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Normalising a sub-network that vanishes on the whole test set.
class DegenerateNormalizationError : public DomainError {
public:
    using DomainError::DomainError;
};

/// Teacher network rejects almost every input at the margin floor.
class DegenerateTeacherError : public DomainError {
public:
    using DomainError::DomainError;
};

}  // namespace minstab
