#pragma once

#include <stdexcept>
#include <string>

namespace mmpt {

// Error categories map onto CLI exit codes: ConfigError -> 2, DataError -> 3,
// anything else derived from Error -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct DataError : Error {
    using Error::Error;
};

// Remote endpoint failures after retries are exhausted.
struct TransportError : Error {
    using Error::Error;
};

// Carries the raw text that could not be parsed.
struct ParseError : Error {
    ParseError(const std::string& msg, std::string raw_text)
        : Error(msg), raw(std::move(raw_text)) {}
    std::string raw;
};

}  // namespace mmpt
