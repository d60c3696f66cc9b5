#include "tokattr/attribution.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>

#include "tokattr/error.hpp"
#include "tokattr/simcore.hpp"

namespace tokattr {
namespace {

constexpr std::size_t kNoAnchor = std::numeric_limits<std::size_t>::max();

std::size_t resolve_window_len(const AttributionConfig& config, SpanRef span) {
  const std::size_t len = config.max_window_len.value_or(span.length() + kDefaultWindowSlack);
  if (len < 1) throw InputError("max window length must be >= 1");
  return len;
}

BoundaryPolicy resolve_policy(std::optional<BoundaryPolicy> policy,
                              const std::optional<EvidenceSegmentation>& segmentation) {
  const BoundaryPolicy resolved =
      policy.value_or(segmentation ? BoundaryPolicy::kRespectEvidence
                                   : BoundaryPolicy::kIgnoreEvidence);
  if (resolved == BoundaryPolicy::kRespectEvidence && !segmentation) {
    throw InputError("respect_evidence boundary policy requires an evidence segmentation");
  }
  return resolved;
}

// Scores every window of length <= max_len that contains at least one
// flagged anchor. Windows are visited in (start, length) order within each
// region and regions are visited left to right, so keeping the first strict
// maximum realises the (earliest start, shortest) tie-break.
AttributionResult search_windows(const Trace& trace, std::size_t layer,
                                 std::span<const double> h_s, std::size_t max_len,
                                 BoundaryPolicy policy,
                                 const std::optional<EvidenceSegmentation>& segmentation,
                                 const std::vector<bool>& is_anchor) {
  const LayerView view = layer_view(trace, layer);
  const RowSet doc_rows(view, segment_indices(trace, Segment::kDocument));
  const std::size_t n = doc_rows.size();
  if (n == 0) throw EngineError("trace has no document tokens");
  if (segmentation && segmentation->document_length() != n) {
    throw InputError("segmentation covers " + std::to_string(segmentation->document_length()) +
                     " tokens, document has " + std::to_string(n));
  }
  const PrefixSums prefix(doc_rows);

  std::vector<DocRange> regions;
  if (policy == BoundaryPolicy::kRespectEvidence) {
    regions = segmentation->ranges();
  } else {
    regions.push_back({0, n});
  }

  AttributionResult result;
  result.degenerate = norm(h_s) == 0.0;
  if (segmentation) result.evidence_scores.assign(segmentation->size(), std::nullopt);

  bool found = false;
  std::vector<double> mean(doc_rows.dim());
  std::vector<std::size_t> next_anchor(n + 1, kNoAnchor);
  for (std::size_t r = 0; r < regions.size(); ++r) {
    const auto [r0, r1] = regions[r];
    next_anchor[r1] = kNoAnchor;
    for (std::size_t i = r1; i-- > r0;) next_anchor[i] = is_anchor[i] ? i : next_anchor[i + 1];

    for (std::size_t s = r0; s < r1; ++s) {
      const std::size_t a = next_anchor[s];
      if (a == kNoAnchor || a - s >= max_len) continue;
      const std::size_t e_hi = std::min(s + max_len, r1);
      for (std::size_t e = a + 1; e <= e_hi; ++e) {
        prefix.window_mean(s, e, mean);
        const double score =
            cosine(h_s, std::span<const double>(mean)).value;
        ++result.candidates_scored;
        if (!found || score > result.score) {
          found = true;
          result.score = score;
          result.window = {s, e};
        }
        if (segmentation) {
          std::optional<std::size_t> ev;
          if (policy == BoundaryPolicy::kRespectEvidence) {
            ev = r;
          } else if (segmentation->evidence_of(s) == segmentation->evidence_of(e - 1)) {
            ev = segmentation->evidence_of(s);
          }
          if (ev) {
            auto& slot = result.evidence_scores[*ev];
            if (!slot || score > *slot) slot = score;
          }
        }
      }
    }
  }
  if (!found) {
    throw EngineError("no candidate window: anchors fall outside every evidence range");
  }

  for (std::size_t e = 0; e < result.evidence_scores.size(); ++e) {
    const auto& s = result.evidence_scores[e];
    if (!s) continue;
    if (!result.predicted_evidence || *s > *result.evidence_scores[*result.predicted_evidence]) {
      result.predicted_evidence = e;
    }
  }
  return result;
}

void check_span(const Trace& trace, SpanRef span) {
  const std::size_t answer_len = segment_indices(trace, Segment::kAnswer).size();
  if (span.start >= span.end) {
    throw InputError("empty span [" + std::to_string(span.start) + ", " +
                     std::to_string(span.end) + ")");
  }
  if (span.end > answer_len) {
    throw InputError("span end " + std::to_string(span.end) + " exceeds answer length " +
                     std::to_string(answer_len));
  }
}

}  // namespace

EvidenceSegmentation::EvidenceSegmentation(std::vector<DocRange> ranges,
                                           std::size_t document_length)
    : ranges_(std::move(ranges)), owner_(document_length), document_length_(document_length) {
  std::size_t expect = 0;
  for (std::size_t e = 0; e < ranges_.size(); ++e) {
    const auto& r = ranges_[e];
    if (r.start != expect || r.end <= r.start || r.end > document_length) {
      throw InputError("evidence range " + std::to_string(e) + " [" + std::to_string(r.start) +
                       ", " + std::to_string(r.end) + ") breaks the tiling of " +
                       std::to_string(document_length) + " document tokens");
    }
    std::fill(owner_.begin() + static_cast<std::ptrdiff_t>(r.start),
              owner_.begin() + static_cast<std::ptrdiff_t>(r.end), e);
    expect = r.end;
  }
  if (expect != document_length) {
    throw InputError("evidence ranges cover " + std::to_string(expect) + " of " +
                     std::to_string(document_length) + " document tokens");
  }
}

std::optional<EvidenceSegmentation> EvidenceSegmentation::from_trace(const Trace& trace) {
  std::vector<DocRange> ranges;
  std::size_t doc_pos = 0;
  bool any = false;
  std::optional<std::uint32_t> current;
  for (const auto& t : trace.manifest.tokens) {
    if (t.segment != Segment::kDocument) continue;
    if (t.passage_index) {
      any = true;
      if (!current || *t.passage_index != *current) {
        if (!ranges.empty()) ranges.back().end = doc_pos;
        ranges.push_back({doc_pos, doc_pos});
        current = t.passage_index;
      }
    }
    ++doc_pos;
  }
  if (!any) return std::nullopt;
  ranges.back().end = doc_pos;
  return EvidenceSegmentation(std::move(ranges), doc_pos);
}

EvidenceSegmentation EvidenceSegmentation::single(std::size_t document_length) {
  return EvidenceSegmentation({{0, document_length}}, document_length);
}

std::size_t EvidenceSegmentation::evidence_of(std::size_t i) const { return owner_.at(i); }

std::vector<double> span_vector(const Trace& trace, std::size_t layer, SpanRef span) {
  check_span(trace, span);
  const LayerView view = layer_view(trace, layer);
  const auto answer = segment_indices(trace, Segment::kAnswer);
  std::vector<double> mean(view.dim(), 0.0);
  for (std::size_t i = span.start; i < span.end; ++i) {
    const auto v = view.row(answer[i]);
    for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += static_cast<double>(v[d]);
  }
  const double inv = 1.0 / static_cast<double>(span.length());
  for (double& x : mean) x *= inv;
  return mean;
}

std::vector<Anchor> select_anchors(std::span<const double> h_s, const Trace& trace,
                                   std::size_t layer, std::size_t anchor_count) {
  if (anchor_count < 1) throw InputError("anchor count must be >= 1");
  const LayerView view = layer_view(trace, layer);
  const RowSet doc_rows(view, segment_indices(trace, Segment::kDocument));
  if (doc_rows.size() == 0) throw EngineError("trace has no document tokens");

  std::vector<Anchor> all(doc_rows.size());
  for (std::size_t j = 0; j < doc_rows.size(); ++j) {
    all[j] = {j, cosine(h_s, doc_rows.row(j)).value};
  }
  const std::size_t k = std::min(anchor_count, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                    [](const Anchor& a, const Anchor& b) {
                      if (a.similarity != b.similarity) return a.similarity > b.similarity;
                      return a.doc_index < b.doc_index;
                    });
  all.resize(k);
  return all;
}

AttributionResult attribute_span(const Trace& trace, SpanRef span,
                                 const AttributionConfig& config,
                                 const std::optional<EvidenceSegmentation>& segmentation) {
  check_span(trace, span);
  const std::size_t max_len = resolve_window_len(config, span);
  const BoundaryPolicy policy = resolve_policy(config.boundary_policy, segmentation);
  const auto h_s = span_vector(trace, config.layer, span);
  auto anchors = select_anchors(h_s, trace, config.layer, config.anchor_count);

  std::vector<bool> is_anchor(segment_indices(trace, Segment::kDocument).size(), false);
  for (const auto& a : anchors) is_anchor[a.doc_index] = true;

  auto result = search_windows(trace, config.layer, h_s, max_len, policy, segmentation, is_anchor);
  result.anchors = std::move(anchors);
  return result;
}

AttributionResult exhaustive_attribute(const Trace& trace, SpanRef span, std::size_t layer,
                                       std::size_t max_window_len,
                                       const std::optional<EvidenceSegmentation>& segmentation,
                                       std::optional<BoundaryPolicy> boundary_policy) {
  check_span(trace, span);
  const std::size_t n = segment_indices(trace, Segment::kDocument).size();
  if (n > kExhaustiveDocumentLimit) {
    throw InputError("exhaustive search limited to " + std::to_string(kExhaustiveDocumentLimit) +
                     " document tokens, got " + std::to_string(n));
  }
  if (max_window_len < 1) throw InputError("max window length must be >= 1");
  const BoundaryPolicy policy = resolve_policy(boundary_policy, segmentation);
  const auto h_s = span_vector(trace, layer, span);
  const std::vector<bool> is_anchor(n, true);
  return search_windows(trace, layer, h_s, max_window_len, policy, segmentation, is_anchor);
}

std::pair<std::size_t, std::size_t> document_char_range(const Trace& trace, DocRange window) {
  const auto doc = segment_indices(trace, Segment::kDocument);
  if (window.start >= window.end || window.end > doc.size()) {
    throw InputError("window outside the document");
  }
  const auto& tokens = trace.manifest.tokens;
  return {tokens[doc[window.start]].char_start, tokens[doc[window.end - 1]].char_end};
}

}  // namespace tokattr
