#pragma once

#include <stdexcept>
#include <string>

namespace lungquant {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or unsupported file content (bad NIfTI header, truncated stream, ...).
class ParseError : public Error {
public:
    using Error::Error;
};

/// Input is readable but excluded by policy (e.g. 8-bit CT intensity data).
class UnsupportedInputError : public Error {
public:
    using Error::Error;
};

/// Failure inside a multi-stage pipeline, tagged with the stage that failed.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& message)
        : Error("[" + stage + "] " + message), stage_(std::move(stage)) {}

    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

} // namespace lungquant
