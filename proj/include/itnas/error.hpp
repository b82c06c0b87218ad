#ifndef ITNAS_ERROR_HPP
#define ITNAS_ERROR_HPP

#include <stdexcept>
#include <string>

namespace itnas {

// Raised when tensor shapes or attributes are incompatible with an operation.
class ShapeError : public std::invalid_argument {
public:
    explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

// Non-finite values, non-deterministic objectives, broken numeric contracts.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Misuse of the autodiff tape (double backward, root not recorded, ...).
class TapeError : public std::logic_error {
public:
    explicit TapeError(const std::string& what) : std::logic_error(what) {}
};

// Malformed files: checkpoints, genotypes, dataset binaries.
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace itnas

#endif // ITNAS_ERROR_HPP
