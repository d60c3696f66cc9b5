#pragma once

// Retrieval and prompting baselines for paragraph attribution and span
// identification.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tokattr/datasets.hpp"
#include "tokattr/llm.hpp"

namespace tokattr {

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

struct RankedPassage {
  std::size_t index = 0;
  double score = 0.0;

  bool operator==(const RankedPassage&) const = default;
};

// Lowercased ASCII alphanumeric runs; other bytes separate terms. Non-ASCII
// bytes are kept inside terms.
std::vector<std::string> bm25_tokenize(std::string_view text);

double bm25_idf(std::size_t passage_count, std::size_t document_frequency);

// Passages sorted by descending score, ties to the smaller index.
std::vector<RankedPassage> bm25_rank(std::string_view query,
                                     const std::vector<std::string>& passages,
                                     const Bm25Params& params = {});

// JSON lines of {"id": ..., "vector": [...]}; every vector has `dim` entries.
struct EmbeddingFile {
  std::size_t dim = 0;
  std::map<std::string, std::vector<double>> vectors;

  const std::vector<double>& at(const std::string& id) const;
};

EmbeddingFile read_embeddings(const std::filesystem::path& path);
EmbeddingFile parse_embeddings(std::istream& in);

std::vector<RankedPassage> dense_rank(const std::string& query_id,
                                      const std::vector<std::string>& passage_ids,
                                      const EmbeddingFile& embeddings);

// Embedding ids used by the dataset-level dense baseline.
std::string dense_span_id(const std::string& sample_id, std::size_t span_index);
std::string dense_passage_id(const std::string& sample_id, std::size_t passage_index);

// --- prompted baselines ------------------------------------------------------

inline constexpr std::string_view kTask1Template = "task1";
inline constexpr std::string_view kTask2Template = "task2";
inline constexpr std::string_view kParaphraseTemplate = "paraphrase";

// Template text with {document}, {question} and {answer} placeholders. The
// document is rendered as numbered paragraphs.
std::string_view llm_template(std::string_view template_id);
std::string numbered_passages(const std::vector<std::string>& passages);
std::string render_llm_prompt(std::string_view template_id,
                              const std::vector<std::string>& passages,
                              std::string_view question, std::string_view answer);

struct LlmSpanResult {
  std::string completion;
  // Spans on the cleaned completion, as the model marked them.
  MarkupParse parsed;
  // The same spans projected onto the original answer: only characters the
  // diff aligns to the answer survive, split into contiguous runs and trimmed.
  std::vector<MarkedSpan> spans;
};

std::vector<MarkedSpan> superimpose_spans(std::string_view answer, const MarkupParse& parsed);

// Throws InputError when the completion cannot be parsed and the client's
// error when the request fails.
LlmSpanResult llm_identify_spans(ChatClient& client, const std::vector<std::string>& passages,
                                 std::string_view question, std::string_view answer);

// The last run of decimal digits, read as a 1-based paragraph number and
// returned 0-based. InputError when there is no number or it is out of range.
std::size_t parse_paragraph_number(std::string_view completion, std::size_t passage_count);

// The answer with exactly one span wrapped in brackets.
std::string mark_single_span(std::string_view answer, std::size_t char_start, std::size_t char_end);

std::size_t llm_attribute_span(ChatClient& client, const std::vector<std::string>& passages,
                               std::string_view question, std::string_view answer,
                               std::size_t span_char_start, std::size_t span_char_end,
                               std::string* completion_out = nullptr);

// --- dataset runs ------------------------------------------------------------
//
// One instance per gold span. Failures are recorded on the instance and the
// instance is excluded from accuracy.

struct ParagraphPrediction {
  std::string sample_id;
  std::size_t span_index = 0;
  std::size_t gold = 0;
  std::optional<std::size_t> predicted;
  std::vector<RankedPassage> ranking;  // retrieval baselines only
  std::string completion;              // LLM baseline only
  std::string error;
};

std::vector<ParagraphPrediction> run_bm25_baseline(const std::vector<AnnotatedSample>& samples,
                                                   const Bm25Params& params = {});
std::vector<ParagraphPrediction> run_dense_baseline(const std::vector<AnnotatedSample>& samples,
                                                    const EmbeddingFile& embeddings);
std::vector<ParagraphPrediction> run_llm_attr_baseline(const std::vector<AnnotatedSample>& samples,
                                                       ChatClient& client, std::size_t jobs);

struct SpanPrediction {
  std::string sample_id;
  std::string completion;
  std::vector<MarkedSpan> spans;
  std::vector<bool> pred;  // per curation token of the answer
  std::vector<bool> gold;
  std::string error;
};

// Token units are the curation tokens of each answer; whitespace tokens
// never count.
std::vector<SpanPrediction> run_llm_spans_baseline(const std::vector<AnnotatedSample>& samples,
                                                   ChatClient& client, std::size_t jobs);
std::vector<bool> span_token_mask(std::string_view answer, const std::vector<ByteRange>& tokens,
                                  const std::vector<ByteRange>& spans);

std::string paragraph_predictions_jsonl(const std::vector<ParagraphPrediction>& predictions);
std::string span_predictions_jsonl(const std::vector<SpanPrediction>& predictions);
std::string paragraph_baseline_report_json(const std::string& baseline,
                                           const std::vector<ParagraphPrediction>& predictions);
std::string span_baseline_report_json(const std::string& baseline,
                                      const std::vector<SpanPrediction>& predictions);

}  // namespace tokattr
