#pragma once

#include <stdexcept>
#include <string>

namespace gem {

// Malformed inputs: bad files, shape mismatches, invariant violations in data.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Caller-side misuse: out-of-range arguments, unknown names, bad configs.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace gem
