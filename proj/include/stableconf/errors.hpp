#pragma once

#include <stdexcept>
#include <string>

namespace stableconf {

enum class ErrorKind {
    InvalidInput,       // malformed arguments or empty inputs
    DegenerateWeights,  // mixture weights sum to zero
    Credential,         // backend rejected the API key
    Transport,          // retry budget exhausted or non-retryable HTTP failure
    FixtureMiss,        // mock backend has no matching fixture entry
    MissingLogprobs,    // completion carries no alternatives at the position
    Template,           // prompt template missing a required substitution
    ParseFailure,       // no answer/confidence could be extracted
    NoParsableSamples,  // every sampled response failed to parse
    TiesPresent,        // exact confidence ties reached a rank-based metric
    UndefinedAuroc,     // all records share one correctness class
    CacheMiss,          // cache-only replay hit an uncached request
    Startup,            // unreadable config or dataset
    RunAborted,         // too many per-question failures
    Io,                 // file read/write failure
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message),
          kind_(kind) {}

    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace stableconf
