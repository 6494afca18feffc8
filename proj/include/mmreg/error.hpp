#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mmreg {

// Error categories double as process exit codes for the CLI.
enum class ErrorKind : int { config = 1, data = 2, numeric = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }
    int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& message) : Error(ErrorKind::config, message) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& message) : Error(ErrorKind::data, message) {}
};

class ShapeError : public DataError {
public:
    explicit ShapeError(const std::string& message) : DataError("shape error: " + message) {}
};

/// Malformed binary input. `offset` is the byte position where decoding failed.
class ParseError : public DataError {
public:
    ParseError(const std::string& path, std::uint64_t offset, const std::string& what)
        : DataError(path + ": " + what + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& message) : Error(ErrorKind::numeric, message) {}
};

}  // namespace mmreg
