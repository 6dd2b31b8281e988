#pragma once

#include <stdexcept>
#include <string>

namespace contra {

// Base class for everything the engine throws on purpose.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// A caller-supplied value is outside its documented domain (tau <= 0,
// alpha outside [0,1], empty vocabulary, ...).
class InvalidParameter : public Error {
public:
    using Error::Error;
};

// Two components that must agree do not (e.g. expert/amateur built over
// vocabularies of different sizes).
class ContractViolation : public Error {
public:
    using Error::Error;
};

// A metric was asked for on input it is not defined over (sequence shorter
// than n, zero-norm embedding).
class UndefinedMetric : public Error {
public:
    using Error::Error;
};

// Corpus ingestion failure; the message names the offending file/line.
class IngestError : public Error {
public:
    using Error::Error;
};

// Report comparison over mismatched prompt sets or empty input.
class ComparisonError : public Error {
public:
    using Error::Error;
};

// File read/write failure; the message names the path.
class IoError : public Error {
public:
    using Error::Error;
};

// Remote logprob-server failures, one kind per distinct protocol violation.
class HttpError : public Error {
public:
    enum class Kind {
        Unreachable,
        Timeout,
        MalformedPayload,
        LengthMismatch,
        NotNormalized,
    };

    HttpError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

}  // namespace contra
