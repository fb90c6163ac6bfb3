#pragma once

#include <stdexcept>
#include <string>

namespace lungnet {

// Incompatible tensor/matrix shapes.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite or otherwise invalid numeric state.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed weights/feature container. The message names the offending field.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad user input: missing directories, undecodable images, out-of-range labels.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Unknown name (tap point, tensor) requested.
class LookupError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid configuration value.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace lungnet
