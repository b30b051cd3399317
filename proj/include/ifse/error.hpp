#pragma once

#include <stdexcept>
#include <string>

namespace ifse {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller passed something that violates an operation's preconditions.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Shapes of two arrays that must agree do not.
class ShapeMismatch : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

class NotFound : public Error {
public:
    using Error::Error;
};

/// Optimistic-concurrency or state conflict (stale revision, duplicate promotion).
class Conflict : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace ifse
