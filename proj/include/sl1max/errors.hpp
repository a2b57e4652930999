#pragma once

#include <stdexcept>
#include <string>

namespace sl1max {

// Every failure the library reports carries one of these codes so callers
// (and the CLI exit-code mapping) can react without parsing messages.
enum class ErrorCode {
    // input / data errors
    EmptyDataset,
    EmptyFile,
    MalformedLine,
    ValueOutOfRange,
    SingleLabelViolation,
    LengthMismatch,
    NoPositives,
    BadK,
    BadSpec,
    VersionMismatch,
    ChecksumMismatch,
    MalformedModel,
    Unsupported,
    // numerical / training errors
    DomainError,
    EmptyClass,
    NonFiniteState,
    StaleProposal,
    InternalError,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

    // Input errors map to CLI exit code 2, everything else to 3.
    bool is_input_error() const noexcept {
        switch (code_) {
        case ErrorCode::EmptyDataset:
        case ErrorCode::EmptyFile:
        case ErrorCode::MalformedLine:
        case ErrorCode::ValueOutOfRange:
        case ErrorCode::SingleLabelViolation:
        case ErrorCode::LengthMismatch:
        case ErrorCode::NoPositives:
        case ErrorCode::BadK:
        case ErrorCode::BadSpec:
        case ErrorCode::VersionMismatch:
        case ErrorCode::ChecksumMismatch:
        case ErrorCode::MalformedModel:
        case ErrorCode::Unsupported:
            return true;
        default:
            return false;
        }
    }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
    throw Error(code, what);
}

} // namespace sl1max
