#pragma once

#include <stdexcept>
#include <string>

namespace dpn {

/// Base of every error thrown by the library. `category()` is a short,
/// stable token the CLI prints so failures can be parsed by scripts.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
    virtual const char* category() const noexcept { return "error"; }
};

class ShapeError : public Error {
public:
    using Error::Error;
    const char* category() const noexcept override { return "shape"; }
};

class ValueError : public Error {
public:
    using Error::Error;
    const char* category() const noexcept override { return "value"; }
};

class StateError : public Error {
public:
    using Error::Error;
    const char* category() const noexcept override { return "state"; }
};

class IoError : public Error {
public:
    using Error::Error;
    const char* category() const noexcept override { return "io"; }
};

class ConfigError : public Error {
public:
    using Error::Error;
    const char* category() const noexcept override { return "config"; }
};

// Checkpoint container failures, one type per failure kind.
class FormatError : public Error {
public:
    using Error::Error;
    const char* category() const noexcept override { return "format"; }
};

class MagicError : public FormatError {
public:
    using FormatError::FormatError;
    const char* category() const noexcept override { return "bad-magic"; }
};

class VersionError : public FormatError {
public:
    using FormatError::FormatError;
    const char* category() const noexcept override { return "bad-version"; }
};

class ChecksumError : public FormatError {
public:
    ChecksumError(const std::string& entry, const std::string& what)
        : FormatError(what), entry_(entry) {}
    const char* category() const noexcept override { return "bad-checksum"; }
    const std::string& entry() const noexcept { return entry_; }

private:
    std::string entry_;
};

class TruncatedError : public FormatError {
public:
    using FormatError::FormatError;
    const char* category() const noexcept override { return "truncated"; }
};

/// Raised when a checkpoint does not match the architecture it is loaded
/// into (missing, unexpected or mis-shaped entries).
class MismatchError : public Error {
public:
    using Error::Error;
    const char* category() const noexcept override { return "mismatch"; }
};

} // namespace dpn
