#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bcosgnn {

/// Broken precondition: shapes that do not chain, indices out of range, stale traces.
class ContractViolation : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A weight row (or any row being normalized) fell below the norm floor.
class ZeroRowError : public ContractViolation {
public:
    explicit ZeroRowError(std::size_t row)
        : ContractViolation("row " + std::to_string(row) + " has norm below the 1e-12 floor"),
          row_(row) {}
    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

/// Operation requires the B-cos variant (dynamic weights do not exist for ReLU models).
class UnsupportedVariant : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed input files or configuration values.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {
inline void require(bool ok, const std::string& what) {
    if (!ok) throw ContractViolation(what);
}
}  // namespace detail

}  // namespace bcosgnn
