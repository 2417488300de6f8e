// Copyright Contributors to the scpainter project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace scpainter {

/// Base class for recoverable errors caused by inputs, files or configuration.
/// The CLI maps every Error to exit code 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Missing, unreadable or malformed input files and arguments.
class InputError : public Error {
public:
    using Error::Error;
};

/// Tensors, images or boxes whose shapes do not agree.
class DimensionMismatch : public Error {
public:
    using Error::Error;
};

/// Parameter values that violate a type invariant (camera, pose, schedule...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Internal invariant violation. The CLI maps this to exit code 1.
class InvariantError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

} // namespace scpainter
