#pragma once

#include <stdexcept>
#include <string>

namespace vapl {

/// Base class for every error the library raises.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor/layer shape disagreement.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Malformed or out-of-range configuration value.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Unreadable or malformed data file (images, prompts, labels, checkpoints).
class DataError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf detected where finite values are required.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace vapl
