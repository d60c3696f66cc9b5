#pragma once

// Token-level P/R/F1, PR curves, paragraph accuracy, layer and threshold
// sweeps, position buckets and the disambiguation subset.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tokattr/attribution.hpp"
#include "tokattr/datasets.hpp"
#include "tokattr/detection.hpp"

namespace tokattr {

inline constexpr int kReportSchemaVersion = 1;

struct Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  Counts& operator+=(const Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const Counts&) const = default;
};

struct MetricsReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  Counts counts;
};

// Both ratios 0/0 gives 1/1/1. Otherwise an undefined ratio is 0.
MetricsReport metrics_from_counts(const Counts& counts);
Counts count_tokens(const std::vector<bool>& pred, const std::vector<bool>& gold);
MetricsReport token_prf(const std::vector<bool>& pred, const std::vector<bool>& gold);

struct PrPoint {
  double theta = 0.0;
  double precision = 0.0;
  double recall = 0.0;

  bool operator==(const PrPoint&) const = default;
};

// One point per threshold in {-1} and the distinct scores, ascending, using
// the strict rule score > theta. Thresholds that select no token are left
// out, since precision is undefined there.
std::vector<PrPoint> pr_curve(std::span<const double> scores, const std::vector<bool>& gold);

double paragraph_accuracy(const std::vector<std::size_t>& predictions,
                          const std::vector<std::size_t>& golds);

// --- grids -----------------------------------------------------------------

// "a..b" (inclusive) or a comma list "1,4,9".
std::vector<std::size_t> parse_layer_list(const std::string& spec);
// "lo:hi:step", inclusive of hi up to rounding, or a comma list.
std::vector<double> parse_theta_grid(const std::string& spec);

// --- dataset evaluation ----------------------------------------------------

struct EvalItem {
  AnnotatedSample sample;
  std::filesystem::path trace_dir;
};

// Pairs samples with traces at <traces_root>/<sample_id>.
std::vector<EvalItem> pair_with_traces(std::vector<AnnotatedSample> samples,
                                       const std::filesystem::path& traces_root);

struct SkippedItem {
  std::string sample_id;
  std::optional<std::size_t> span_index;
  std::string reason;

  bool operator==(const SkippedItem&) const = default;
};

struct GridCell {
  std::size_t layer = 0;
  double theta = 0.0;
  MetricsReport metrics;
};

struct Subtask1Options {
  std::vector<std::size_t> layers;
  std::vector<double> thetas;
  std::size_t jobs = 1;
  bool filter_spans = true;
};

struct Subtask1Result {
  std::vector<GridCell> grid;  // layer-major, thetas ascending as given
  std::size_t best = 0;        // index into grid; first maximum of F1
  std::vector<PrPoint> pr_curve;  // pooled scores at the best cell's layer
  std::size_t evaluated = 0;
  std::vector<SkippedItem> skipped;
};

Subtask1Result sweep_subtask1(const std::vector<EvalItem>& items, const Subtask1Options& options,
                              const StopList& stoplist = StopList::english_v1());

struct Subtask2Options {
  std::vector<std::size_t> layers;
  std::size_t anchor_count = kDefaultAnchorCount;
  std::optional<std::size_t> max_window_len;
  std::optional<BoundaryPolicy> boundary_policy;
  std::size_t jobs = 1;
  // When set, only these (sample_id, span_index) instances are evaluated.
  std::optional<std::set<std::pair<std::string, std::size_t>>> only;
};

struct SpanOutcome {
  std::string sample_id;
  std::size_t span_index = 0;
  std::size_t gold_passage = 0;
  std::size_t answer_char_start = 0;
  std::size_t answer_length = 0;
  std::vector<std::optional<std::size_t>> predicted;  // per options.layers entry
};

struct LayerAccuracy {
  std::size_t layer = 0;
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy = 0.0;
};

struct Subtask2Result {
  std::vector<LayerAccuracy> layers;
  std::size_t best = 0;  // index into layers; first maximum
  std::vector<SpanOutcome> outcomes;
  std::vector<SkippedItem> skipped;
};

Subtask2Result sweep_subtask2(const std::vector<EvalItem>& items, const Subtask2Options& options);

// --- analyses ----------------------------------------------------------------

struct PositionedOutcome {
  std::size_t answer_char_start = 0;
  std::size_t answer_length = 0;
  bool correct = false;
};

struct PositionBucket {
  std::size_t index = 0;  // decile 0..9 covering [index/10, (index+1)/10)
  std::size_t total = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
};

// Bucket = min(9, floor(10 * start / length)). Empty buckets are absent.
std::vector<PositionBucket> position_buckets(const std::vector<PositionedOutcome>& outcomes);
std::vector<PositionedOutcome> positioned_outcomes(const Subtask2Result& result,
                                                   std::size_t layer_slot);

struct DisambiguationItem {
  std::string sample_id;
  std::size_t span_index = 0;
  std::size_t occurrences = 0;  // distinct passages containing the span text
};

struct DisambiguationSubset {
  std::vector<DisambiguationItem> items;
  // Mean of 1/occurrences; unset for an empty subset.
  std::optional<double> random_baseline;
};

DisambiguationSubset disambiguation_subset(const std::vector<AnnotatedSample>& samples);
double random_baseline(const std::vector<std::size_t>& occurrence_counts);

// --- report files ------------------------------------------------------------

std::string grid_csv(const Subtask1Result& result);
std::string pr_curve_csv(const std::vector<PrPoint>& curve);
std::string layers_csv(const Subtask2Result& result);
std::string buckets_csv(const std::vector<PositionBucket>& buckets);

std::string subtask1_report_json(const Subtask1Result& result);
std::string subtask2_report_json(const Subtask2Result& result);
std::string positions_report_json(const std::vector<PositionBucket>& buckets, std::size_t layer);
std::string disambiguation_report_json(const DisambiguationSubset& subset,
                                       const Subtask2Result& result);

// Writes `content` to `path` through a temporary file and rename.
void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace tokattr
