#pragma once

// Maps an answer span to the document window it was copied from.
//
// The span's mean hidden state h_S picks the K most similar document tokens
// as anchors. Every contiguous window of at most L tokens that contains an
// anchor is scored by cosine(h_S, mean of the window), and the best window
// wins. With a passage segmentation, each passage is scored by its best
// window and the top passage is the predicted source.
//
// All document positions here are document-local: index 0 is the first
// document token of the trace.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "tokattr/trace.hpp"

namespace tokattr {

struct SpanRef {
  // Answer-local token indices [start, end).
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - start; }
  bool operator==(const SpanRef&) const = default;
};

struct DocRange {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - start; }
  bool contains(std::size_t i) const { return start <= i && i < end; }
  bool operator==(const DocRange&) const = default;
};

enum class BoundaryPolicy { kRespectEvidence, kIgnoreEvidence };

inline constexpr std::size_t kDefaultAnchorCount = 5;
inline constexpr std::size_t kDefaultWindowSlack = 10;

struct AttributionConfig {
  std::size_t layer = 0;
  std::size_t anchor_count = kDefaultAnchorCount;
  // Unset means span length + kDefaultWindowSlack.
  std::optional<std::size_t> max_window_len;
  // Unset means respect evidence when a segmentation is given.
  std::optional<BoundaryPolicy> boundary_policy;
};

// Ordered, non-overlapping passage ranges that together cover the document.
class EvidenceSegmentation {
 public:
  // Throws InputError if the ranges do not tile [0, document_length).
  EvidenceSegmentation(std::vector<DocRange> ranges, std::size_t document_length);

  // From the passage_index of document tokens. Returns nullopt when the trace
  // carries no passage indices.
  static std::optional<EvidenceSegmentation> from_trace(const Trace& trace);
  // The whole document as a single evidence span.
  static EvidenceSegmentation single(std::size_t document_length);

  const std::vector<DocRange>& ranges() const { return ranges_; }
  std::size_t size() const { return ranges_.size(); }
  std::size_t document_length() const { return document_length_; }
  // Evidence index containing document token i.
  std::size_t evidence_of(std::size_t i) const;

 private:
  std::vector<DocRange> ranges_;
  std::vector<std::size_t> owner_;
  std::size_t document_length_;
};

struct Anchor {
  std::size_t doc_index = 0;
  double similarity = 0.0;

  bool operator==(const Anchor&) const = default;
};

struct AttributionResult {
  DocRange window;
  double score = 0.0;
  std::vector<Anchor> anchors;
  // Best candidate score per evidence span; nullopt when no candidate window
  // lies inside that span. Empty without a segmentation.
  std::vector<std::optional<double>> evidence_scores;
  std::optional<std::size_t> predicted_evidence;
  // h_S had zero norm; every score is 0 and the earliest shortest window won.
  bool degenerate = false;
  std::size_t candidates_scored = 0;
};

// Mean of the span's answer-token vectors. Throws InputError on an empty or
// out-of-range span.
std::vector<double> span_vector(const Trace& trace, std::size_t layer, SpanRef span);

// The K document tokens most similar to h_S, by descending similarity with
// ties to the smaller index. Returns every document token when K exceeds the
// document length. Throws EngineError without document tokens.
std::vector<Anchor> select_anchors(std::span<const double> h_s, const Trace& trace,
                                   std::size_t layer, std::size_t anchor_count);

// Anchor-constrained window search. Throws InputError on invalid span or
// config (including respect_evidence without a segmentation) and EngineError
// when no candidate window exists.
AttributionResult attribute_span(const Trace& trace, SpanRef span,
                                 const AttributionConfig& config,
                                 const std::optional<EvidenceSegmentation>& segmentation);

inline constexpr std::size_t kExhaustiveDocumentLimit = 4096;

// Same contract as attribute_span with every document token as an anchor.
// Intended as a test oracle; refuses documents longer than
// kExhaustiveDocumentLimit tokens.
AttributionResult exhaustive_attribute(
    const Trace& trace, SpanRef span, std::size_t layer, std::size_t max_window_len,
    const std::optional<EvidenceSegmentation>& segmentation,
    std::optional<BoundaryPolicy> boundary_policy = std::nullopt);

// Prompt byte range [first.char_start, last.char_end) of a document window.
std::pair<std::size_t, std::size_t> document_char_range(const Trace& trace, DocRange window);

}  // namespace tokattr
