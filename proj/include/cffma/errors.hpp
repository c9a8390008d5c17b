#pragma once

#include <stdexcept>
#include <string>

namespace cffma {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or axis disagreement between operands.
class DimError : public Error {
public:
    using Error::Error;
};

// A precondition of an operation was violated.
class ContractError : public Error {
public:
    using Error::Error;
};

// Malformed or unsupported file contents.
class FormatError : public Error {
public:
    using Error::Error;
};

// Filesystem-level failure (open, read, write).
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace cffma
