#pragma once

// Core token types and the error hierarchy shared by all modules.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace memaudit {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

class AuditError : public std::runtime_error {
public:
  explicit AuditError(const std::string& what) : std::runtime_error(what) {}
};

class ContextOverflowError : public AuditError {
public:
  explicit ContextOverflowError(const std::string& what) : AuditError(what) {}
};

class InvalidTokenError : public AuditError {
public:
  explicit InvalidTokenError(const std::string& what) : AuditError(what) {}
};

class UnsupportedCapabilityError : public AuditError {
public:
  explicit UnsupportedCapabilityError(const std::string& what) : AuditError(what) {}
};

class EmptyCorpusError : public AuditError {
public:
  explicit EmptyCorpusError(const std::string& what) : AuditError(what) {}
};

class TargetTooShortError : public AuditError {
public:
  explicit TargetTooShortError(const std::string& what) : AuditError(what) {}
};

class DataFormatError : public AuditError {
public:
  explicit DataFormatError(const std::string& what) : AuditError(what) {}
};

// Log-probability used for exact zeros in table rows; avoids -inf arithmetic.
inline constexpr double kZeroProbLogSentinel = -1e9;

// Renders token ids as text, assuming byte-level ids. Printable ASCII is kept
// as-is, everything else becomes \xNN; ids outside [0,255] become <id>.
std::string escape_tokens(const TokenSeq& tokens);

}  // namespace memaudit
