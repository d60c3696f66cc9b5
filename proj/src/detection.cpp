#include "tokattr/detection.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

#include "tokattr/error.hpp"
#include "tokattr/simcore.hpp"
#include "tokattr/text.hpp"

namespace tokattr {

// Generated from data/stopwords_en_v1.txt at configure time.
extern const char* const kEnglishStopwordsV1;

namespace {

std::set<std::string> parse_word_list(std::istream& in) {
  std::set<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    const auto word = text::trim(line);
    if (word.empty() || word.front() == '#') continue;
    words.insert(text::ascii_lower(word));
  }
  return words;
}

}  // namespace

const StopList& StopList::english_v1() {
  static const StopList list = [] {
    std::istringstream in(kEnglishStopwordsV1);
    return StopList(parse_word_list(in));
  }();
  return list;
}

StopList StopList::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open stoplist " + path.string());
  auto words = parse_word_list(in);
  if (words.empty()) throw InputError("stoplist " + path.string() + " is empty");
  return StopList(std::move(words));
}

bool StopList::is_stopword(std::string_view word) const {
  return words_.find(text::ascii_lower(word)) != words_.end();
}

bool StopList::only_stopwords_or_punctuation(std::string_view s) const {
  const auto cps = text::decode_utf8(s);
  std::size_t i = 0;
  while (i < cps.size()) {
    if (text::is_space(cps[i].value)) {
      ++i;
      continue;
    }
    // One whitespace-delimited piece, with punctuation stripped at both ends.
    std::size_t j = i;
    while (j < cps.size() && !text::is_space(cps[j].value)) ++j;
    std::size_t first = i, last = j;
    while (first < last && text::is_punctuation(cps[first].value)) ++first;
    while (last > first && text::is_punctuation(cps[last - 1].value)) --last;
    if (first < last) {
      std::string word;
      for (std::size_t k = first; k < last; ++k) {
        // Typographic apostrophe folds to ASCII so "don’t" matches "don't".
        if (cps[k].value == 0x2019) {
          word += '\'';
        } else {
          word += s.substr(cps[k].byte_start, cps[k].byte_len);
        }
      }
      if (!is_stopword(word)) return false;
    }
    i = j;
  }
  return true;
}

std::vector<TokenRecord> answer_tokens(const Trace& trace) {
  std::vector<TokenRecord> out;
  for (const auto& t : trace.manifest.tokens) {
    if (t.segment == Segment::kAnswer) out.push_back(t);
  }
  return out;
}

std::vector<double> score_answer_tokens(const Trace& trace, std::size_t layer) {
  const LayerView view = layer_view(trace, layer);
  auto doc = segment_indices(trace, Segment::kDocument);
  auto ans = segment_indices(trace, Segment::kAnswer);
  if (doc.empty()) throw EngineError("trace has no document tokens");
  if (ans.empty()) throw EngineError("trace has no answer tokens");

  const RowSet doc_rows(view, std::move(doc));
  const RowSet ans_rows(view, std::move(ans));
  std::vector<double> doc_norms(doc_rows.size());
  for (std::size_t j = 0; j < doc_rows.size(); ++j) doc_norms[j] = norm(doc_rows.row(j));

  std::vector<double> scores(ans_rows.size());
  for (std::size_t i = 0; i < ans_rows.size(); ++i) {
    const auto a = ans_rows.row(i);
    const double an = norm(a);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < doc_rows.size(); ++j) {
      const double sim =
          (an == 0.0 || doc_norms[j] == 0.0) ? 0.0 : dot(a, doc_rows.row(j)) / (an * doc_norms[j]);
      best = std::max(best, sim);
    }
    scores[i] = best;
  }
  return scores;
}

std::vector<bool> apply_threshold(std::span<const double> scores, const DetectionConfig& config) {
  std::vector<bool> mask(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) mask[i] = scores[i] > config.theta;
  return mask;
}

std::vector<AnswerSpan> group_spans(const std::vector<bool>& mask,
                                    std::span<const TokenRecord> answer_tokens,
                                    const StopList& stoplist, bool filter) {
  if (mask.size() != answer_tokens.size()) {
    throw InputError("mask length " + std::to_string(mask.size()) + " != answer token count " +
                     std::to_string(answer_tokens.size()));
  }
  std::vector<AnswerSpan> spans;
  std::size_t i = 0;
  while (i < mask.size()) {
    if (!mask[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    AnswerSpan span;
    span.start = i;
    span.char_start = answer_tokens[i].char_start;
    while (j < mask.size() && mask[j]) {
      span.text += answer_tokens[j].text;
      ++j;
    }
    span.end = j;
    span.char_end = answer_tokens[j - 1].char_end;
    if (!filter || !stoplist.only_stopwords_or_punctuation(span.text)) {
      spans.push_back(std::move(span));
    }
    i = j;
  }
  return spans;
}

ExtractionResult detect(const Trace& trace, const DetectionConfig& config,
                        const StopList& stoplist, bool filter) {
  ExtractionResult result;
  result.scores = score_answer_tokens(trace, config.layer);
  result.mask = apply_threshold(result.scores, config);
  const auto tokens = answer_tokens(trace);
  result.spans = group_spans(result.mask, tokens, stoplist, filter);
  return result;
}

}  // namespace tokattr
