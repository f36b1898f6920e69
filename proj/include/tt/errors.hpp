// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace tt {

// Violated precondition or malformed argument.
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Non-finite value where the math requires a finite one.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class FileErrorKind {
    BadMagic,
    BadVersion,
    BadKind,
    DimMismatch,
    Truncated,
    TrailingBytes,
    Io,
};

inline const char* to_string(FileErrorKind k) {
    switch (k) {
        case FileErrorKind::BadMagic: return "bad magic";
        case FileErrorKind::BadVersion: return "unsupported version";
        case FileErrorKind::BadKind: return "unexpected record kind";
        case FileErrorKind::DimMismatch: return "dimension mismatch";
        case FileErrorKind::Truncated: return "truncated file";
        case FileErrorKind::TrailingBytes: return "trailing bytes";
        case FileErrorKind::Io: return "I/O failure";
    }
    return "unknown";
}

// File-format failure with a machine-checkable kind.
class FileError : public std::runtime_error {
public:
    FileError(FileErrorKind kind, const std::string& detail)
        : std::runtime_error(std::string(to_string(kind)) + ": " + detail),
          kind_(kind) {}
    FileErrorKind kind() const { return kind_; }

private:
    FileErrorKind kind_;
};

}  // namespace tt
