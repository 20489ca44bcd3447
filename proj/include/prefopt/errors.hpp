#pragma once

#include <stdexcept>
#include <string>

namespace prefopt {

// Stable exit-code contract used by the CLI: 0 success, 2 usage/config,
// 3 numerical failure, 4 I/O.
enum class ExitCode : int {
    ok = 0,
    usage = 2,
    numerical = 3,
    io = 4,
};

struct Error : std::runtime_error {
    ExitCode exit_code;
    Error(std::string msg, ExitCode code) : std::runtime_error(std::move(msg)), exit_code(code) {}
};

// Tensor shape incompatibility (e.g. matmul inner-dimension mismatch).
struct ShapeError : Error {
    explicit ShapeError(std::string msg) : Error(std::move(msg), ExitCode::usage) {}
};

// Violated call precondition (empty answer, non-scalar backward root, ...).
struct ContractError : Error {
    explicit ContractError(std::string msg) : Error(std::move(msg), ExitCode::usage) {}
};

// Invalid configuration values or incompatible config/data combinations.
struct ConfigError : Error {
    explicit ConfigError(std::string msg) : Error(std::move(msg), ExitCode::usage) {}
};

// A dataset record that cannot be consumed (e.g. fewer negatives than k).
struct DataError : Error {
    explicit DataError(std::string msg) : Error(std::move(msg), ExitCode::usage) {}
};

// Malformed input file; carries a 1-based line number when known.
struct ParseError : Error {
    long line;
    ParseError(std::string msg, long line_no = -1) : Error(std::move(msg), ExitCode::io), line(line_no) {}
};

// Well-formed input that violates a documented invariant.
struct ValidationError : Error {
    explicit ValidationError(std::string msg) : Error(std::move(msg), ExitCode::usage) {}
};

// Non-finite loss or gradient; carries the training step when known.
struct NumericalError : Error {
    long step;
    NumericalError(std::string msg, long at_step = -1)
        : Error(std::move(msg), ExitCode::numerical), step(at_step) {}
};

struct IoError : Error {
    explicit IoError(std::string msg) : Error(std::move(msg), ExitCode::io) {}
};

} // namespace prefopt
