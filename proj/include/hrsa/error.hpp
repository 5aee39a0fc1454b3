#pragma once

#include <stdexcept>
#include <string>

namespace hrsa {

/// Input violates a precondition or invariant (shapes, ranges, non-finite data).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Filesystem or decode failure.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace hrsa
