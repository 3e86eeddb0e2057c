#pragma once

#include <stdexcept>
#include <string>

namespace vizecg {

// Shape or size disagreement between operands.
class DimensionError : public std::runtime_error {
public:
    explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

// API misuse: violated precondition, double backward, missing gradient, ...
class ContractError : public std::logic_error {
public:
    explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

// Malformed file content (bad magic, truncation, unparsable cell).
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Filesystem-level failure (open/read/write).
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite value where a finite one is required (diverged training, bad input).
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace vizecg
