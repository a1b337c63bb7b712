#pragma once

#include <stdexcept>
#include <string>

namespace svec {

// Base class for all errors raised by the toolkit. Every failure mode the
// modules document maps to one named subclass so callers can catch precisely.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class LayerOutOfRangeError : public Error {
public:
    using Error::Error;
};

class DimensionMismatchError : public Error {
public:
    using Error::Error;
};

class ContextOverflowError : public Error {
public:
    using Error::Error;
};

class EmptyPromptError : public Error {
public:
    using Error::Error;
};

// An averaging span with no positions (pooling over an empty region).
class EmptySpanError : public Error {
public:
    using Error::Error;
};

// Wrong magic bytes or structurally invalid file contents.
class FormatError : public Error {
public:
    using Error::Error;
};

class VersionMismatchError : public Error {
public:
    using Error::Error;
};

class TruncatedFileError : public Error {
public:
    using Error::Error;
};

class ChecksumError : public Error {
public:
    using Error::Error;
};

// A raw score outside the rubric range, or an out-of-domain argument.
class RangeError : public Error {
public:
    using Error::Error;
};

// Unparseable judge or scorer output (after the documented reprompt).
class ParseError : public Error {
public:
    using Error::Error;
};

// HTTP/network failure that survived the retry budget.
class TransportError : public Error {
public:
    using Error::Error;
};

// A record reached a stage without the fields that stage requires
// (e.g. filtering an unscored contrastive record).
class UnscoredRecordError : public Error {
public:
    using Error::Error;
};

// Empty input where at least one element is required.
class EmptyInputError : public Error {
public:
    using Error::Error;
};

// Mismatched trait/layer/backbone between a vector and a steering config,
// or an invalid configuration set.
class ConfigMismatchError : public Error {
public:
    using Error::Error;
};

// Manifest or config validation failure; message carries the field name.
class ValidationError : public Error {
public:
    using Error::Error;
};

// A run ledger that does not belong to the manifest being executed.
class LedgerMismatchError : public Error {
public:
    using Error::Error;
};

}  // namespace svec
