// Copyright (c) 2026 obbkit contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace obbkit {

/// Base class for all obbkit errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Box with a non-finite field or a non-positive extent.
struct InvalidBoxError : Error {
  using Error::Error;
};

/// Operand dimensions do not line up.
struct ShapeError : Error {
  using Error::Error;
};

/// Degenerate geometric input (collinear points, fewer than 3 vertices).
struct DegenerateInputError : Error {
  using Error::Error;
};

/// Invalid user-supplied data or configuration (unknown ids, out-of-range values).
struct ValidationError : Error {
  using Error::Error;
};

/// Malformed file content; carries the file name and 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::string file, std::size_t line, const std::string& message)
      : Error(file + ":" + std::to_string(line) + ": " + message),
        file_(std::move(file)),
        line_(line) {}

  const std::string& file() const noexcept { return file_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

}  // namespace obbkit
