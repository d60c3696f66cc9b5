#include "tokattr/answer_map.hpp"

#include <algorithm>

#include "tokattr/error.hpp"
#include "tokattr/text.hpp"

namespace tokattr {
namespace {

bool overlaps(const ByteRange& token, std::size_t start, std::size_t end, std::string_view answer,
              OverlapRule rule) {
  const std::size_t lo = std::max(token.start, start);
  const std::size_t hi = std::min(token.end, end);
  if (lo >= hi) return false;
  if (rule == OverlapRule::kAny) return true;
  return !text::is_blank(answer.substr(lo, hi - lo));
}

}  // namespace

AnswerTokenMap map_answer(const Trace& trace, std::string_view answer) {
  const auto& tokens = trace.manifest.tokens;
  const auto idx = segment_indices(trace, Segment::kAnswer);
  AnswerTokenMap map;
  map.answer_length = answer.size();

  bool found = false;
  const auto& prompt = trace.manifest.prompt;
  if (prompt && prompt->size() >= answer.size() &&
      std::string_view(*prompt).substr(prompt->size() - answer.size()) == answer) {
    map.base = prompt->size() - answer.size();
    found = true;
  } else if (!idx.empty()) {
    std::string joined;
    for (auto i : idx) joined += tokens[i].text;
    const auto pos = joined.find(answer);
    if (pos != std::string::npos) {
      map.base = tokens[idx.front()].char_start + pos;
      found = true;
    }
  }
  if (!found) throw InputError("answer text not found among the trace's answer tokens");

  for (auto i : idx) {
    const auto& t = tokens[i];
    const auto clip = [&](std::size_t x) {
      if (x <= map.base) return std::size_t{0};
      return std::min(x - map.base, map.answer_length);
    };
    map.ranges.push_back({clip(t.char_start), clip(t.char_end)});
  }
  return map;
}

std::vector<bool> tokens_overlapping(const AnswerTokenMap& map, std::string_view answer,
                                     const std::vector<ByteRange>& ranges, OverlapRule rule) {
  std::vector<bool> mask(map.ranges.size(), false);
  for (std::size_t t = 0; t < map.ranges.size(); ++t) {
    for (const auto& r : ranges) {
      if (overlaps(map.ranges[t], r.start, r.end, answer, rule)) {
        mask[t] = true;
        break;
      }
    }
  }
  return mask;
}

std::optional<SpanRef> span_for_chars(const AnswerTokenMap& map, std::string_view answer,
                                      std::size_t start, std::size_t end, OverlapRule rule) {
  if (start > end || end > map.answer_length) {
    throw InputError("character range [" + std::to_string(start) + ", " + std::to_string(end) +
                     ") is outside the answer of length " + std::to_string(map.answer_length));
  }
  std::optional<SpanRef> span;
  for (std::size_t t = 0; t < map.ranges.size(); ++t) {
    if (!overlaps(map.ranges[t], start, end, answer, rule)) continue;
    if (!span) span = SpanRef{t, t + 1};
    span->end = t + 1;
  }
  return span;
}

}  // namespace tokattr
