#pragma once

#include <stdexcept>
#include <string>

namespace ramf {

// Typed error taxonomy. The CLI prints the kind name on stderr and maps
// kinds to exit codes, so every failure is machine-identifiable.
enum class ErrorKind {
    MissingRecord,
    ShapeMismatch,
    CorruptPayload,
    NonFiniteValue,
    InvalidTarget,
    OddHeadCount,
    IndexOutOfRange,
    UnknownVariant,
    MissingModality,
    BackendUnavailable,
    EmptyResponse,
    CacheCorruption,
    UnparseableVerdict,
    WrongFrameCount,
    TooFewSamples,
    DivergedLoss,
    EmptyTestSet,
    MissingPlaceholder,
    NonFiniteLogit,
    VariantWithoutLayer2,
    InvalidArgument,
    IoError,
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message),
          kind_(kind) {}

    ErrorKind kind() const { return kind_; }
    const char* kind_name() const { return error_kind_name(kind_); }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace ramf
