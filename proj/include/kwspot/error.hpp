#pragma once

#include <stdexcept>
#include <string>

namespace kwspot {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad dimensions or invalid configuration values.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed files (WAV, manifest, checkpoint, feature cache).
class FormatError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Data that parses but violates an invariant (segment ranges, lengths).
class ValidationError : public Error {
public:
    using Error::Error;
};

}  // namespace kwspot
