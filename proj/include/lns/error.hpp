#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lns {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible. The message names both shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A value violates an operation's precondition (non-±1 input, bad rates, ...).
class ValueError : public Error {
public:
    using Error::Error;
};

/// Malformed binary input. Carries the byte offset where decoding failed.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Configuration problem tied to a key and, when known, a source line.
class ConfigError : public Error {
public:
    ConfigError(std::string key, int line, const std::string& what)
        : Error(format(key, line, what)), key_(std::move(key)), line_(line) {}

    const std::string& key() const noexcept { return key_; }
    int line() const noexcept { return line_; }

private:
    static std::string format(const std::string& key, int line, const std::string& what) {
        std::string s = "config key '" + key + "'";
        if (line > 0) s += " (line " + std::to_string(line) + ")";
        return s + ": " + what;
    }

    std::string key_;
    int line_;
};

/// Training produced a non-finite loss for too many consecutive steps.
class DivergenceError : public Error {
public:
    using Error::Error;
};

}  // namespace lns
