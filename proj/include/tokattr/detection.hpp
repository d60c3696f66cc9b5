#pragma once

// Identifies answer tokens copied from the document: an answer token counts
// as copied at layer l when some document token's hidden state at l has
// cosine similarity strictly greater than theta with it.

#include <cstddef>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tokattr/trace.hpp"

namespace tokattr {

struct DetectionConfig {
  std::size_t layer = 0;
  double theta = 0.5;
};

// Stopwords plus Unicode punctuation, used to drop spans with no content.
class StopList {
 public:
  StopList() = default;
  explicit StopList(const std::set<std::string>& words) : words_(words.begin(), words.end()) {}

  // The 179-word English list shipped as data/stopwords_en_v1.txt.
  static const StopList& english_v1();
  // One lowercase word per line; blank lines and '#' comments ignored.
  static StopList from_file(const std::filesystem::path& path);

  bool empty() const { return words_.empty(); }
  std::size_t size() const { return words_.size(); }
  bool is_stopword(std::string_view word) const;

  // True when text has no word outside the list once punctuation and
  // whitespace are removed. Blank text qualifies.
  bool only_stopwords_or_punctuation(std::string_view text) const;

 private:
  std::set<std::string, std::less<>> words_;
};

// A maximal run of copied answer tokens.
struct AnswerSpan {
  // Answer-local token indices [start, end).
  std::size_t start = 0;
  std::size_t end = 0;
  // Prompt byte offsets.
  std::size_t char_start = 0;
  std::size_t char_end = 0;
  std::string text;

  bool operator==(const AnswerSpan&) const = default;
};

struct ExtractionResult {
  std::vector<double> scores;
  std::vector<bool> mask;
  std::vector<AnswerSpan> spans;
};

// scores[i] = max over document tokens of cosine(answer_i, doc_j) at `layer`.
// Throws EngineError if the trace has no document or no answer tokens and
// InputError if the layer is out of range.
std::vector<double> score_answer_tokens(const Trace& trace, std::size_t layer);

// mask[i] = scores[i] > theta (strict).
std::vector<bool> apply_threshold(std::span<const double> scores, const DetectionConfig& config);

// Groups maximal runs of masked tokens. `answer_tokens` are the answer's
// token records in order. With `filter` on, runs whose text holds only
// stopwords, punctuation or whitespace are dropped.
std::vector<AnswerSpan> group_spans(const std::vector<bool>& mask,
                                    std::span<const TokenRecord> answer_tokens,
                                    const StopList& stoplist, bool filter);

ExtractionResult detect(const Trace& trace, const DetectionConfig& config,
                        const StopList& stoplist = StopList::english_v1(), bool filter = true);

// Answer token records in prompt order.
std::vector<TokenRecord> answer_tokens(const Trace& trace);

}  // namespace tokattr
