#include "dsu/error.hpp"

namespace dsu {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::TruncatedFile: return "TruncatedFile";
        case ErrorCode::NonFiniteValue: return "NonFiniteValue";
        case ErrorCode::DimMismatch: return "DimMismatch";
        case ErrorCode::IoFailure: return "IoFailure";
        case ErrorCode::MissingTier: return "MissingTier";
        case ErrorCode::MalformedTextGrid: return "MalformedTextGrid";
        case ErrorCode::OverlappingIntervals: return "OverlappingIntervals";
        case ErrorCode::UnsupportedEncoding: return "UnsupportedEncoding";
        case ErrorCode::DuplicateUttId: return "DuplicateUttId";
        case ErrorCode::MalformedRecord: return "MalformedRecord";
        case ErrorCode::InvalidSpec: return "InvalidSpec";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::TooFewFrames: return "TooFewFrames";
        case ErrorCode::DegenerateData: return "DegenerateData";
        case ErrorCode::UnitOutOfRange: return "UnitOutOfRange";
        case ErrorCode::EmptyDistribution: return "EmptyDistribution";
        case ErrorCode::EmptyCorpus: return "EmptyCorpus";
        case ErrorCode::TokenOutOfRange: return "TokenOutOfRange";
        case ErrorCode::EmptyEval: return "EmptyEval";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorCode::GradCheckFailure: return "GradCheckFailure";
        case ErrorCode::NegativeInterval: return "NegativeInterval";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::SilentInput: return "SilentInput";
        case ErrorCode::RatioOutOfRange: return "RatioOutOfRange";
        case ErrorCode::ZeroNoise: return "ZeroNoise";
        case ErrorCode::MissingWav: return "MissingWav";
        case ErrorCode::MissingAlignment: return "MissingAlignment";
    }
    return "Unknown";
}

}  // namespace dsu
