#pragma once

#include <stdexcept>
#include <string>

namespace ipp {

// Base class for every error thrown by the toolkit. Subclasses exist so
// callers can distinguish bad input files from bad configuration from
// remote-transport trouble without string matching.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input data (dataset files, LLM responses, cache lines...).
class ParseError : public Error {
public:
    using Error::Error;
};

// Missing files, invalid experiment configuration, bad provider setup.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Arguments outside an operation's contract (unknown item ids, bad
// fractions, misaligned lists).
class DomainError : public Error {
public:
    using Error::Error;
};

// An object is in the wrong state for the requested operation, e.g.
// planning with an untrained model or a diverged training run.
class StateError : public Error {
public:
    using Error::Error;
};

// HTTP transport failed after the retry budget was exhausted.
class TransportError : public Error {
public:
    using Error::Error;
};

// Replay-mode lookup did not find the request in the cache.
class CacheMissError : public Error {
public:
    explicit CacheMissError(const std::string& key)
        : Error("cache miss in replay mode for key " + key), key_(key) {}
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

// An LLM response could not be turned into a usable influence path.
// Carries the raw response text for auditing.
class PlannerError : public Error {
public:
    PlannerError(const std::string& what, std::string raw_response)
        : Error(what), raw_(std::move(raw_response)) {}
    const std::string& raw_response() const { return raw_; }

private:
    std::string raw_;
};

// Title resolution found two or more equally good catalog candidates.
class TitleAmbiguityError : public DomainError {
public:
    using DomainError::DomainError;
};

}  // namespace ipp
