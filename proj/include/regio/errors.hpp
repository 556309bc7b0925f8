#pragma once

#include <stdexcept>
#include <string>

namespace regio {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// The declared relation closure is not antisymmetric.
struct CycleError : Error {
    using Error::Error;
};

/// A referenced element id was never declared.
struct UnknownElementError : Error {
    using Error::Error;
};

/// A pairwise quantity was requested for incomparable elements.
struct NotComparableError : Error {
    using Error::Error;
};

/// A matrix or vector has the wrong dimensions for its slot.
struct ShapeError : Error {
    using Error::Error;
};

/// An argument lies outside the mathematical domain (e.g. non-positive
/// coordinates passed to an entropy term).
struct DomainError : Error {
    using Error::Error;
};

/// The loss family does not provide the requested inverse gradient.
struct MissingInverseError : Error {
    using Error::Error;
};

/// An iterate left the representable range (inf/nan coordinates).
struct NumericalOverflowError : Error {
    using Error::Error;
};

/// A linear system that the caller expected to be solvable is singular.
struct SingularSystemError : Error {
    using Error::Error;
};

/// A brute-force enumeration would exceed the configured size cap.
struct SizeError : Error {
    using Error::Error;
};

/// Composite maps disagree with the directly declared map.
struct FunctorialityError : Error {
    using Error::Error;
};

/// A problem or result file could not be parsed.
struct ParseError : Error {
    using Error::Error;
};

/// A parsed problem is structurally inconsistent.
struct ValidationError : Error {
    using Error::Error;
};

}  // namespace regio
