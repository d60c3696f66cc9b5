#pragma once

// Maps character ranges of an answer string onto the trace's answer tokens.

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "tokattr/attribution.hpp"
#include "tokattr/datasets.hpp"
#include "tokattr/trace.hpp"

namespace tokattr {

enum class OverlapRule {
  kAny,            // any shared byte selects the token
  kNonWhitespace,  // the shared bytes must include a non-whitespace byte
};

struct AnswerTokenMap {
  // Prompt byte offset of answer byte 0.
  std::size_t base = 0;
  std::size_t answer_length = 0;
  // Per answer token, its byte range relative to the answer, clipped to
  // [0, answer_length]. Clipped-away tokens get an empty range.
  std::vector<ByteRange> ranges;
};

// Locates `answer` in the trace: as the suffix of the recorded prompt when
// there is one, otherwise inside the concatenated answer-token text. Throws
// InputError when the answer cannot be found.
AnswerTokenMap map_answer(const Trace& trace, std::string_view answer);

// Token mask marking tokens that overlap any of the ranges.
std::vector<bool> tokens_overlapping(const AnswerTokenMap& map, std::string_view answer,
                                     const std::vector<ByteRange>& ranges, OverlapRule rule);

// Smallest token span covering every token that overlaps [start, end);
// nullopt when none does.
std::optional<SpanRef> span_for_chars(const AnswerTokenMap& map, std::string_view answer,
                                      std::size_t start, std::size_t end, OverlapRule rule);

}  // namespace tokattr
