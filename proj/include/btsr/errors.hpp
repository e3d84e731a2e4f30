#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace btsr {

// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class EmptyCorpusError : public Error { using Error::Error; };
class SplitError : public Error { using Error::Error; };
class InvalidInputError : public Error { using Error::Error; };
class IndexError : public Error { using Error::Error; };
class SamplingError : public Error { using Error::Error; };
class ConsistencyError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class DegenerateInputError : public Error { using Error::Error; };
class UndefinedMetricError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };

// Raised when a forward or backward pass produces a NaN/Inf.
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& tensor)
        : Error("non-finite values in " + tensor), tensor_(tensor) {}
    const std::string& tensor() const noexcept { return tensor_; }

private:
    std::string tensor_;
};

}  // namespace btsr
