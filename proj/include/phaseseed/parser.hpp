#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "phaseseed/ir.hpp"

namespace phaseseed {

struct Diagnostic {
  int line = 0;
  int column = 0;
  std::string message;

  std::string str() const;
};

struct ParseResult {
  std::optional<Program> program;
  std::vector<Diagnostic> diagnostics;

  bool ok() const { return program.has_value(); }
};

/// Parses PIR source. On success the program has resolved names, block
/// targets, gep field offsets and inferred register types. Syntax errors,
/// duplicate symbols and unresolved references are reported as diagnostics.
ParseResult parse_program(std::string_view text);

/// Parses and throws std::runtime_error carrying the first diagnostic.
/// Convenience for tests and trusted corpus files.
Program parse_or_throw(std::string_view text);

/// Semantic checks: typing, terminators, register def-before-use, opaque
/// accesses, entry function, start_processing placement.
std::vector<Diagnostic> validate(const Program& p);

/// Canonical PIR text. parse_program(print_program(p)) reproduces p.
std::string print_program(const Program& p);

}  // namespace phaseseed
