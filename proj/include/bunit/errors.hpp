#pragma once

#include <stdexcept>
#include <string>

namespace bunit {

// Bad input data or parameters: maps to CLI exit code 2.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input file contents.
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem / serialization failures: maps to CLI exit code 3.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace bunit
