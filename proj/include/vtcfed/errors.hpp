#pragma once

#include <stdexcept>
#include <string>

namespace vtcfed {

// Error taxonomy used across the library. Everything derives from
// std::runtime_error (or std::invalid_argument / std::domain_error where the
// standard type already says the right thing) so callers can catch broadly.

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct PartitionError : std::runtime_error {
    explicit PartitionError(const std::string& msg) : std::runtime_error("partition error: " + msg) {}
};

struct IngestionError : std::runtime_error {
    explicit IngestionError(const std::string& msg) : std::runtime_error("ingestion error: " + msg) {}
};

struct ProtocolError : std::runtime_error {
    explicit ProtocolError(const std::string& msg) : std::runtime_error("protocol error: " + msg) {}
};

struct MissingPrototypeError : std::runtime_error {
    explicit MissingPrototypeError(int class_id)
        : std::runtime_error("missing prototype for class " + std::to_string(class_id)) {}
};

struct GenerationError : std::runtime_error {
    explicit GenerationError(const std::string& msg) : std::runtime_error("generation error: " + msg) {}
};

// Raised when a training step produces a non-finite loss; carries the
// diagnostic text (loss breakdown, round/client context added by callers).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

}  // namespace vtcfed
