#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mcl {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor extents do not agree with what an operation expects.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A caller broke a documented precondition (bad argument value, wrong mode).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Malformed or truncated model file.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// Dataset directory or image file could not be read.
class LoadError : public Error {
public:
    using Error::Error;
};

/// Geometry that makes normalization undefined (coincident eye centers).
class DegenerateFaceError : public Error {
public:
    using Error::Error;
};

/// Non-finite values appeared during optimization.
class NumericError : public Error {
public:
    using Error::Error;
};

/// A training stage failed; the message carries the stage name.
class TrainingError : public Error {
public:
    TrainingError(std::string stage, const std::string& what)
        : Error(stage + ": " + what), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace mcl
