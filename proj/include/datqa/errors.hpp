#pragma once

#include <stdexcept>
#include <string>

namespace datqa {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Array extents do not conform to an operation's rules.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// A forward op produced NaN/Inf, or a value left its stable range.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Malformed or inconsistent input data (files, records, configs).
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Training produced a non-finite loss. Carries the offending step.
struct DivergenceError : Error {
    size_t epoch;
    size_t batch;
    DivergenceError(const std::string& msg, size_t epoch_, size_t batch_)
        : Error(msg), epoch(epoch_), batch(batch_) {}
};

}  // namespace datqa
