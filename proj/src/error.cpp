#include "hiprompt/error.hpp"

namespace hiprompt {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::precondition: return "Precondition";
    case ErrorCode::missing_slot: return "MissingSlot";
    case ErrorCode::empty_answer: return "EmptyAnswer";
    case ErrorCode::unparseable_answer: return "UnparseableAnswer";
    case ErrorCode::client_error: return "ClientError";
    case ErrorCode::io_error: return "IoError";
    case ErrorCode::format_error: return "FormatError";
    case ErrorCode::empty_text: return "EmptyText";
    case ErrorCode::sequence_too_long: return "SequenceTooLong";
    case ErrorCode::non_finite_value: return "NonFiniteValue";
    case ErrorCode::composition_mismatch: return "CompositionMismatch";
    case ErrorCode::unknown_category: return "UnknownCategory";
    case ErrorCode::degenerate_feature: return "DegenerateFeature";
    case ErrorCode::empty_positives: return "EmptyPositives";
    case ErrorCode::non_finite_loss: return "NonFiniteLoss";
    case ErrorCode::empty_corpus: return "EmptyCorpus";
    case ErrorCode::empty_eval_set: return "EmptyEvalSet";
    case ErrorCode::config_error: return "ConfigError";
  }
  return "Unknown";
}

Error Error::format_at_line(std::size_t line, const std::string& what) {
  Error e(ErrorCode::format_error, "line " + std::to_string(line) + ": " + what);
  e.line_ = line;
  return e;
}

Error Error::format_at_offset(std::uint64_t offset, const std::string& what) {
  Error e(ErrorCode::format_error, "byte offset " + std::to_string(offset) + ": " + what);
  e.byte_offset_ = offset;
  return e;
}

}  // namespace hiprompt
