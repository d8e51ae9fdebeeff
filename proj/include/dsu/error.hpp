#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dsu {

enum class ErrorCode {
    // corpusio
    BadMagic,
    TruncatedFile,
    NonFiniteValue,
    DimMismatch,
    IoFailure,
    MissingTier,
    MalformedTextGrid,
    OverlappingIntervals,
    UnsupportedEncoding,
    DuplicateUttId,
    MalformedRecord,
    // synthkit
    InvalidSpec,
    LengthMismatch,
    // quantizer
    TooFewFrames,
    DegenerateData,
    // unitstream
    UnitOutOfRange,
    EmptyDistribution,
    // unitlm
    EmptyCorpus,
    TokenOutOfRange,
    EmptyEval,
    InvalidConfig,
    NonFiniteLoss,
    GradCheckFailure,
    // phonalign
    NegativeInterval,
    ShapeMismatch,
    // perturb
    SilentInput,
    RatioOutOfRange,
    ZeroNoise,
    // experiments
    MissingWav,
    MissingAlignment,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Single exception type for the toolkit; `code()` identifies the failure class.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace dsu
