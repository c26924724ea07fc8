#pragma once

#include <stdexcept>
#include <string>

namespace ddgae {

/// Malformed arguments, shape mismatches, out-of-range timesteps.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A state that the absorbing forward process can never produce.
class InconsistentState : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Missing or unreadable dataset files.
class IngestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dataset files that parse but contradict each other.
class CorruptDataset : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite loss or parameters during training.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A cross-validation split that cannot train a classifier.
class InvalidFold : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ChecksumError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace ddgae
