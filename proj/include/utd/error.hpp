#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace utd {

enum class ErrorKind {
    Parse,
    Schema,
    UnknownVideo,
    Io,
    Endpoint,
    Image,
    Precondition,
    MissingEntry,
    DimensionMismatch,
    ZeroNorm,
    MissingEmbedding,
    EmptyResults,
    DegenerateInput,
    TrainFailure,
    EmptyTestSet,
    MissingSample,
    UnknownClass,
    InfeasibleQuota,
};

constexpr std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::Parse: return "ParseError";
    case ErrorKind::Schema: return "SchemaError";
    case ErrorKind::UnknownVideo: return "UnknownVideo";
    case ErrorKind::Io: return "IoError";
    case ErrorKind::Endpoint: return "EndpointError";
    case ErrorKind::Image: return "ImageError";
    case ErrorKind::Precondition: return "PreconditionError";
    case ErrorKind::MissingEntry: return "MissingEntry";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::ZeroNorm: return "ZeroNorm";
    case ErrorKind::MissingEmbedding: return "MissingEmbedding";
    case ErrorKind::EmptyResults: return "EmptyResults";
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::TrainFailure: return "TrainFailure";
    case ErrorKind::EmptyTestSet: return "EmptyTestSet";
    case ErrorKind::MissingSample: return "MissingSample";
    case ErrorKind::UnknownClass: return "UnknownClass";
    case ErrorKind::InfeasibleQuota: return "InfeasibleQuota";
    }
    return "Error";
}

/// Domain error. `key()` names the offending record (video id, json path,
/// cache key...) when there is one.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string message, std::string key = {})
        : std::runtime_error(std::string(to_string(kind)) + ": " + message +
                             (key.empty() ? std::string() : " [" + key + "]")),
          kind_(kind), key_(std::move(key)) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& key() const noexcept { return key_; }

private:
    ErrorKind kind_;
    std::string key_;
};

[[noreturn]] inline void fail(ErrorKind kind, std::string message, std::string key = {}) {
    throw Error(kind, std::move(message), std::move(key));
}

inline void require(bool condition, std::string_view message) {
    if (!condition)
        fail(ErrorKind::Precondition, std::string(message));
}

} // namespace utd
