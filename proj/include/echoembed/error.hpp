#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace echoembed {

enum class Errc {
  empty_input,
  placeholder_mismatch,
  token_out_of_range,
  empty_second_occurrence,
  invalid_config,
  sequence_too_long,
  render_too_long,
  protocol_error,
  dimension_mismatch,
  timeout,
  empty_selection,
  index_out_of_range,
  empty_sequence,
  zero_vector,
  corpus_missing,
  malformed_row,
  divergence_detected,
  too_few_pairs,
  too_short,
  constant_input,
  empty_subset,
  io_error,
};

constexpr std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::empty_input: return "EmptyInput";
    case Errc::placeholder_mismatch: return "PlaceholderMismatch";
    case Errc::token_out_of_range: return "TokenOutOfRange";
    case Errc::empty_second_occurrence: return "EmptySecondOccurrence";
    case Errc::invalid_config: return "InvalidConfig";
    case Errc::sequence_too_long: return "SequenceTooLong";
    case Errc::render_too_long: return "RenderTooLong";
    case Errc::protocol_error: return "ProtocolError";
    case Errc::dimension_mismatch: return "DimensionMismatch";
    case Errc::timeout: return "Timeout";
    case Errc::empty_selection: return "EmptySelection";
    case Errc::index_out_of_range: return "IndexOutOfRange";
    case Errc::empty_sequence: return "EmptySequence";
    case Errc::zero_vector: return "ZeroVector";
    case Errc::corpus_missing: return "CorpusMissing";
    case Errc::malformed_row: return "MalformedRow";
    case Errc::divergence_detected: return "DivergenceDetected";
    case Errc::too_few_pairs: return "TooFewPairs";
    case Errc::too_short: return "TooShort";
    case Errc::constant_input: return "ConstantInput";
    case Errc::empty_subset: return "EmptySubset";
    case Errc::io_error: return "IoError";
  }
  return "Unknown";
}

/// Every failure in the library is reported as an Error carrying a code.
/// what() reads "<CodeName>: <detail>".
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail)
      : std::runtime_error(std::string(errc_name(code)) + ": " + detail), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace echoembed
