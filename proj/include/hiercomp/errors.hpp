#pragma once

#include <stdexcept>
#include <string>

namespace hiercomp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed model-spec document. `where` is a line number or a field path.
class ParseError : public Error {
public:
    ParseError(const std::string& where, const std::string& what)
        : Error(where.empty() ? what : where + ": " + what), where_(where), reason_(what) {}

    const std::string& where() const noexcept { return where_; }
    const std::string& reason() const noexcept { return reason_; }

private:
    std::string where_;
    std::string reason_;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class UnknownVariable : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

/// The requested analysis is not defined for a mechanism family (e.g. derivatives of a table).
class UnsupportedFamily : public Error {
public:
    using Error::Error;
};

/// A statistical test cannot be evaluated (singular conditioning covariance, constant column).
class DegenerateTest : public Error {
public:
    using Error::Error;
};

class InsufficientSamples : public Error {
public:
    using Error::Error;
};

class MissingSupportEntry : public Error {
public:
    using Error::Error;
};

/// Non-finite loss during training.
class Divergence : public Error {
public:
    using Error::Error;
};

}  // namespace hiercomp
