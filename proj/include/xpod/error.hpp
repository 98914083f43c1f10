#pragma once

#include <stdexcept>
#include <string>

namespace xpod {

/// Bad input: violated precondition, malformed file, inconsistent config.
/// The CLI maps this to exit status 2.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Failure while doing otherwise valid work (I/O, child process, solver).
/// The CLI maps this to exit status 3.
class RuntimeFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace xpod
