#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kpl {

enum class Errc {
    InvalidDepth,
    OutOfBounds,
    BehindCamera,
    NotConnected,
    DidNotConverge,
    UnobservedKeypoint,
    NoSeedAttached,
    EmptyModel,
    NothingToBound,
    Degenerate,
    LengthMismatch,
    TooFewPoints,
    EmptyComparison,
    DimensionMismatch,
    MissingFile,
    TrajectoryLengthMismatch,
    MalformedRow,
    SchemaVersionUnsupported,
    ValidationError,
    SpecInvalid,
    PrerequisiteMissing,
    InvalidArgument,
    IoError,
};

std::string_view to_string(Errc code) noexcept;

/// Library-wide exception. `context()` carries a location such as a file
/// path, line number or JSON path when one is known.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message, std::string context = {})
        : std::runtime_error(message), code_(code), context_(std::move(context))
    {
    }

    Errc code() const noexcept { return code_; }
    const std::string& context() const noexcept { return context_; }

private:
    Errc code_;
    std::string context_;
};

}  // namespace kpl
