#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace hiprompt {

enum class ErrorCode {
  precondition,
  missing_slot,
  empty_answer,
  unparseable_answer,
  client_error,
  io_error,
  format_error,
  empty_text,
  sequence_too_long,
  non_finite_value,
  composition_mismatch,
  unknown_category,
  degenerate_feature,
  empty_positives,
  non_finite_loss,
  empty_corpus,
  empty_eval_set,
  config_error,
};

const char* to_string(ErrorCode code);

// Single exception type for the library; `code()` tells callers which
// failure happened. Format errors optionally carry a line number (text
// formats) or a byte offset (binary formats).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  std::optional<std::size_t> line() const noexcept { return line_; }
  std::optional<std::uint64_t> byte_offset() const noexcept { return byte_offset_; }

  static Error format_at_line(std::size_t line, const std::string& what);
  static Error format_at_offset(std::uint64_t offset, const std::string& what);

 private:
  ErrorCode code_;
  std::optional<std::size_t> line_;
  std::optional<std::uint64_t> byte_offset_;
};

}  // namespace hiprompt
