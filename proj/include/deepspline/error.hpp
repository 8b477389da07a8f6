#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace deepspline {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input files (CSV rows, model JSON).
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// A variational problem without a feasible solution (e.g. conflicting duplicate abscissae).
class InfeasibleError : public Error {
public:
    using Error::Error;
};

/// Numerical solver failure: iteration limit, singular basis, lost feasibility.
class SolverError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite objective.
class DivergenceError : public Error {
public:
    using Error::Error;
};

} // namespace deepspline
