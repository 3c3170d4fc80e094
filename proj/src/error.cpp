#include "keylabel/error.hpp"

namespace kpl {

std::string_view to_string(Errc code) noexcept
{
    switch (code) {
    case Errc::InvalidDepth: return "InvalidDepth";
    case Errc::OutOfBounds: return "OutOfBounds";
    case Errc::BehindCamera: return "BehindCamera";
    case Errc::NotConnected: return "NotConnected";
    case Errc::DidNotConverge: return "DidNotConverge";
    case Errc::UnobservedKeypoint: return "UnobservedKeypoint";
    case Errc::NoSeedAttached: return "NoSeedAttached";
    case Errc::EmptyModel: return "EmptyModel";
    case Errc::NothingToBound: return "NothingToBound";
    case Errc::Degenerate: return "Degenerate";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::TooFewPoints: return "TooFewPoints";
    case Errc::EmptyComparison: return "EmptyComparison";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::MissingFile: return "MissingFile";
    case Errc::TrajectoryLengthMismatch: return "TrajectoryLengthMismatch";
    case Errc::MalformedRow: return "MalformedRow";
    case Errc::SchemaVersionUnsupported: return "SchemaVersionUnsupported";
    case Errc::ValidationError: return "ValidationError";
    case Errc::SpecInvalid: return "SpecInvalid";
    case Errc::PrerequisiteMissing: return "PrerequisiteMissing";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::IoError: return "IoError";
    }
    return "Unknown";
}

}  // namespace kpl
