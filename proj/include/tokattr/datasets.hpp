#pragma once

// Annotated samples, the QuoteSum bracket markup, and the curation pipeline
// that turns sentence-level citation records into token-level annotations.
//
// All character offsets are byte offsets into UTF-8 strings.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tokattr/detection.hpp"

namespace tokattr {

inline constexpr int kSampleSchemaVersion = 1;
inline constexpr int kRawRecordSchemaVersion = 1;

struct GoldSpan {
  std::size_t answer_char_start = 0;
  std::size_t answer_char_end = 0;
  std::size_t passage_index = 0;
  // Offsets into passages[passage_index], when known.
  std::optional<std::size_t> source_char_start;
  std::optional<std::size_t> source_char_end;

  bool operator==(const GoldSpan&) const = default;
};

struct AnnotatedSample {
  std::string sample_id;
  std::string question;
  std::vector<std::string> passages;
  std::string answer;
  std::vector<GoldSpan> gold_spans;

  std::string_view span_text(const GoldSpan& span) const {
    return std::string_view(answer).substr(span.answer_char_start,
                                           span.answer_char_end - span.answer_char_start);
  }
  bool operator==(const AnnotatedSample&) const = default;
};

// Throws InputError naming the first broken invariant.
void validate_sample(const AnnotatedSample& sample);

// JSON-lines serialization of AnnotatedSample (one object per line, keys
// sorted, schema_version 1).
std::string sample_to_json_line(const AnnotatedSample& sample);
AnnotatedSample sample_from_json_line(std::string_view line);
void write_samples(const std::filesystem::path& path, const std::vector<AnnotatedSample>& samples);
std::vector<AnnotatedSample> read_samples(const std::filesystem::path& path);

// --- QuoteSum markup -------------------------------------------------------
//
// A copied span is written "[ <n> <text> ]" with a 1-based passage number.
// Input files are JSON lines of {"id", "question", "passages", "answer"};
// "qid" is accepted for "id" and "source1".."sourceN" for "passages".

struct MarkedSpan {
  std::size_t char_start = 0;  // into the cleaned answer
  std::size_t char_end = 0;
  std::size_t passage_index = 0;  // 0-based

  bool operator==(const MarkedSpan&) const = default;
};

struct MarkupParse {
  std::string clean;
  std::vector<MarkedSpan> spans;
};

// Throws InputError on unbalanced or malformed brackets and on passage
// numbers outside [1, passage_count].
MarkupParse parse_markup(std::string_view marked, std::size_t passage_count);
std::string render_markup(std::string_view clean, const std::vector<MarkedSpan>& spans);

AnnotatedSample parse_quotesum_line(std::string_view line, std::size_t line_number);
std::vector<AnnotatedSample> parse_quotesum(std::istream& in);
std::vector<AnnotatedSample> parse_quotesum(const std::filesystem::path& path);
// Inverse of parse_quotesum_line on canonical input.
std::string quotesum_line(const AnnotatedSample& sample);

// --- Curation --------------------------------------------------------------

struct ByteRange {
  std::size_t start = 0;
  std::size_t end = 0;

  bool operator==(const ByteRange&) const = default;
};

// Sentence boundaries: after '.', '!' or '?' (plus any closing quotes or
// brackets) when followed by whitespace and then an ASCII uppercase letter
// or digit. A '.' ending one of the abbreviations "Mr.", "Dr.", "e.g.",
// "i.e.", "etc.", "vs.", "U.S." or a single capital letter never splits.
// Ranges are trimmed of surrounding whitespace.
std::vector<ByteRange> split_sentences(std::string_view text);

// Bytes of `statement` that align to `source` under the code point diff.
struct CharMatchSet {
  std::vector<bool> matched;  // one flag per statement byte
  std::vector<std::optional<std::size_t>> source_byte;

  std::size_t count() const;
};

CharMatchSet char_diff_align(std::string_view statement, std::string_view source_sentence);

// Tiling of `text` into word runs, whitespace runs and single punctuation
// marks. Used as the annotation tokenizer during curation.
std::vector<ByteRange> curation_tokens(std::string_view text);

// A token is marked when every non-whitespace byte in it is matched.
// Throws InputError when the ranges do not tile the statement.
std::vector<bool> tokens_from_char_matches(std::string_view statement,
                                           const std::vector<ByteRange>& token_ranges,
                                           const CharMatchSet& matches);

struct RawVerifiabilityRecord {
  std::string record_id;
  std::string query;
  std::string response;
  std::string statement;
  std::vector<std::string> source_passages;
  std::vector<std::size_t> citation_sentence_indices;
};

// Blank-line separated passages, each trimmed; empty passages removed.
std::vector<std::string> split_passages(std::string_view source_text);

RawVerifiabilityRecord raw_record_from_json_line(std::string_view line, std::size_t line_number);
std::vector<RawVerifiabilityRecord> read_raw_records(const std::filesystem::path& path);

struct DroppedRecord {
  std::string record_id;
  std::string reason;

  bool operator==(const DroppedRecord&) const = default;
};

struct CurationResult {
  std::vector<AnnotatedSample> samples;
  std::vector<DroppedRecord> dropped;
};

CurationResult curate(const std::vector<RawVerifiabilityRecord>& records,
                      const StopList& stoplist = StopList::english_v1());

std::string dropped_to_json_line(const DroppedRecord& dropped);

}  // namespace tokattr
