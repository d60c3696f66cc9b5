#include "tokattr/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include <json.hpp>

#include "tokattr/answer_map.hpp"
#include "tokattr/error.hpp"
#include "tokattr/parallel.hpp"
#include "tokattr/text.hpp"

namespace tokattr {
namespace {

using nlohmann::json;

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw InputError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " +
                     std::to_string(b) + ")");
  }
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

std::size_t parse_size(std::string_view s, const std::string& context) {
  s = text::trim(s);
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw InputError("bad " + context + " '" + std::string(s) + "'");
  }
  return v;
}

double parse_real(std::string_view s, const std::string& context) {
  s = text::trim(s);
  const std::string str(s);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(str, &used);
  } catch (const std::exception&) {
    throw InputError("bad " + context + " '" + str + "'");
  }
  if (used != str.size() || !std::isfinite(v)) throw InputError("bad " + context + " '" + str + "'");
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<ByteRange> gold_ranges(const AnnotatedSample& s) {
  std::vector<ByteRange> out;
  for (const auto& g : s.gold_spans) out.push_back({g.answer_char_start, g.answer_char_end});
  return out;
}

json metrics_json(const MetricsReport& m) {
  return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
          {"tp", m.counts.tp},        {"fp", m.counts.fp},  {"fn", m.counts.fn}};
}

json skipped_json(const std::vector<SkippedItem>& skipped) {
  json out = json::array();
  for (const auto& s : skipped) {
    json j{{"sample_id", s.sample_id}, {"reason", s.reason}};
    j["span_index"] = s.span_index ? json(*s.span_index) : json(nullptr);
    out.push_back(j);
  }
  return out;
}

json layers_json(const Subtask2Result& r) {
  json out = json::array();
  for (const auto& l : r.layers) {
    out.push_back({{"layer", l.layer}, {"correct", l.correct}, {"total", l.total},
                   {"accuracy", l.accuracy}});
  }
  return out;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace

MetricsReport metrics_from_counts(const Counts& c) {
  MetricsReport m;
  m.counts = c;
  if (c.tp + c.fp + c.fn == 0) {
    m.precision = m.recall = m.f1 = 1.0;
    return m;
  }
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.recall = ratio(c.tp, c.tp + c.fn);
  const double s = m.precision + m.recall;
  m.f1 = s > 0.0 ? 2.0 * m.precision * m.recall / s : 0.0;
  return m;
}

Counts count_tokens(const std::vector<bool>& pred, const std::vector<bool>& gold) {
  check_lengths(pred.size(), gold.size(), "token_prf");
  Counts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] && gold[i]) ++c.tp;
    else if (pred[i]) ++c.fp;
    else if (gold[i]) ++c.fn;
  }
  return c;
}

MetricsReport token_prf(const std::vector<bool>& pred, const std::vector<bool>& gold) {
  return metrics_from_counts(count_tokens(pred, gold));
}

std::vector<PrPoint> pr_curve(std::span<const double> scores, const std::vector<bool>& gold) {
  check_lengths(scores.size(), gold.size(), "pr_curve");
  std::vector<std::pair<double, bool>> sorted;
  sorted.reserve(scores.size());
  std::size_t positives = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    sorted.emplace_back(scores[i], gold[i]);
    positives += gold[i];
  }
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  std::vector<double> thresholds{-1.0};
  for (const auto& [s, _] : sorted) {
    if (s != thresholds.back() && s > -1.0) thresholds.push_back(s);
  }
  std::sort(thresholds.begin(), thresholds.end());

  // Sweep thresholds upward, dropping tokens whose score no longer exceeds θ.
  std::vector<PrPoint> out;
  std::size_t cut = 0, dropped_pos = 0;
  for (double theta : thresholds) {
    while (cut < sorted.size() && sorted[cut].first <= theta) {
      dropped_pos += sorted[cut].second;
      ++cut;
    }
    const std::size_t predicted = sorted.size() - cut;
    if (predicted == 0) break;
    const std::size_t tp = positives - dropped_pos;
    Counts c{tp, predicted - tp, positives - tp};
    const auto m = metrics_from_counts(c);
    out.push_back({theta, m.precision, m.recall});
  }
  return out;
}

double paragraph_accuracy(const std::vector<std::size_t>& predictions,
                          const std::vector<std::size_t>& golds) {
  check_lengths(predictions.size(), golds.size(), "paragraph_accuracy");
  if (predictions.empty()) throw InputError("paragraph_accuracy: no instances");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) correct += predictions[i] == golds[i];
  return ratio(correct, golds.size());
}

std::vector<std::size_t> parse_layer_list(const std::string& spec) {
  std::vector<std::size_t> out;
  if (const auto dots = spec.find(".."); dots != std::string::npos) {
    const auto a = parse_size(std::string_view(spec).substr(0, dots), "layer");
    const auto b = parse_size(std::string_view(spec).substr(dots + 2), "layer");
    if (b < a) throw InputError("layer range " + spec + " is reversed");
    for (auto l = a; l <= b; ++l) out.push_back(l);
    return out;
  }
  for (const auto& part : split(spec, ',')) out.push_back(parse_size(part, "layer"));
  if (out.empty()) throw InputError("empty layer list");
  return out;
}

std::vector<double> parse_theta_grid(const std::string& spec) {
  std::vector<double> out;
  const auto parts = split(spec, ':');
  if (parts.size() == 3) {
    const double lo = parse_real(parts[0], "theta");
    const double hi = parse_real(parts[1], "theta");
    const double step = parse_real(parts[2], "theta step");
    if (!(step > 0.0)) throw InputError("theta step must be > 0");
    if (hi < lo) throw InputError("theta range " + spec + " is reversed");
    const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
    for (std::size_t i = 0; i <= n; ++i) {
      out.push_back(std::round((lo + static_cast<double>(i) * step) * 1e12) / 1e12);
    }
    return out;
  }
  if (parts.size() != 1) throw InputError("bad theta grid '" + spec + "'");
  for (const auto& p : split(spec, ',')) out.push_back(parse_real(p, "theta"));
  return out;
}

std::vector<EvalItem> pair_with_traces(std::vector<AnnotatedSample> samples,
                                       const std::filesystem::path& traces_root) {
  std::vector<EvalItem> out;
  out.reserve(samples.size());
  for (auto& s : samples) {
    auto dir = traces_root / s.sample_id;
    out.push_back({std::move(s), std::move(dir)});
  }
  return out;
}

Subtask1Result sweep_subtask1(const std::vector<EvalItem>& items, const Subtask1Options& options,
                              const StopList& stoplist) {
  if (options.layers.empty()) throw InputError("subtask1 sweep needs at least one layer");
  if (options.thetas.empty()) throw InputError("subtask1 sweep needs at least one theta");
  const std::size_t cells = options.layers.size() * options.thetas.size();

  struct PerItem {
    std::optional<std::string> error;
    std::vector<Counts> counts;
    std::vector<std::vector<double>> scores;  // per layer
    std::vector<bool> gold;
  };
  std::vector<PerItem> per(items.size());

  parallel_for(items.size(), options.jobs, [&](std::size_t i) {
    auto& out = per[i];
    try {
      const auto& sample = items[i].sample;
      const Trace trace = read_trace(items[i].trace_dir);
      const auto map = map_answer(trace, sample.answer);
      out.gold = tokens_overlapping(map, sample.answer, gold_ranges(sample), OverlapRule::kAny);
      const auto answer = answer_tokens(trace);
      out.counts.assign(cells, {});
      for (std::size_t li = 0; li < options.layers.size(); ++li) {
        auto scores = score_answer_tokens(trace, options.layers[li]);
        for (std::size_t ti = 0; ti < options.thetas.size(); ++ti) {
          auto mask = apply_threshold(scores, {options.layers[li], options.thetas[ti]});
          if (options.filter_spans) {
            std::vector<bool> kept(mask.size(), false);
            for (const auto& s : group_spans(mask, answer, stoplist, true)) {
              std::fill(kept.begin() + static_cast<std::ptrdiff_t>(s.start),
                        kept.begin() + static_cast<std::ptrdiff_t>(s.end), true);
            }
            mask = std::move(kept);
          }
          out.counts[li * options.thetas.size() + ti] = count_tokens(mask, out.gold);
        }
        out.scores.push_back(std::move(scores));
      }
    } catch (const std::exception& e) {
      out.error = e.what();
    }
  });

  Subtask1Result result;
  std::vector<Counts> totals(cells);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (per[i].error) {
      result.skipped.push_back({items[i].sample.sample_id, std::nullopt, *per[i].error});
      continue;
    }
    ++result.evaluated;
    for (std::size_t c = 0; c < cells; ++c) totals[c] += per[i].counts[c];
  }
  for (std::size_t li = 0; li < options.layers.size(); ++li) {
    for (std::size_t ti = 0; ti < options.thetas.size(); ++ti) {
      const auto& c = totals[li * options.thetas.size() + ti];
      result.grid.push_back({options.layers[li], options.thetas[ti], metrics_from_counts(c)});
    }
  }
  for (std::size_t c = 1; c < result.grid.size(); ++c) {
    if (result.grid[c].metrics.f1 > result.grid[result.best].metrics.f1) result.best = c;
  }

  const std::size_t best_layer_slot = result.best / options.thetas.size();
  std::vector<double> pooled;
  std::vector<bool> pooled_gold;
  for (const auto& p : per) {
    if (p.error) continue;
    const auto& s = p.scores[best_layer_slot];
    pooled.insert(pooled.end(), s.begin(), s.end());
    pooled_gold.insert(pooled_gold.end(), p.gold.begin(), p.gold.end());
  }
  result.pr_curve = pr_curve(pooled, pooled_gold);
  return result;
}

Subtask2Result sweep_subtask2(const std::vector<EvalItem>& items, const Subtask2Options& options) {
  if (options.layers.empty()) throw InputError("subtask2 sweep needs at least one layer");

  struct PerItem {
    std::vector<SpanOutcome> outcomes;
    std::vector<SkippedItem> skipped;
  };
  std::vector<PerItem> per(items.size());

  parallel_for(items.size(), options.jobs, [&](std::size_t i) {
    const auto& sample = items[i].sample;
    auto& out = per[i];
    std::vector<std::size_t> wanted;
    for (std::size_t k = 0; k < sample.gold_spans.size(); ++k) {
      if (!options.only || options.only->count({sample.sample_id, k})) wanted.push_back(k);
    }
    if (wanted.empty()) return;
    try {
      const Trace trace = read_trace(items[i].trace_dir);
      const auto map = map_answer(trace, sample.answer);
      auto segmentation = EvidenceSegmentation::from_trace(trace);
      if (!segmentation) {
        if (sample.passages.size() > 1) {
          throw InputError("trace has no passage indices but the sample has " +
                           std::to_string(sample.passages.size()) + " passages");
        }
        segmentation = EvidenceSegmentation::single(segment_indices(trace, Segment::kDocument).size());
      } else if (segmentation->size() != sample.passages.size()) {
        throw InputError("trace has " + std::to_string(segmentation->size()) +
                         " evidence spans, the sample has " +
                         std::to_string(sample.passages.size()) + " passages");
      }
      for (auto k : wanted) {
        const auto& g = sample.gold_spans[k];
        const auto span =
            span_for_chars(map, sample.answer, g.answer_char_start, g.answer_char_end, OverlapRule::kAny);
        if (!span) {
          out.skipped.push_back({sample.sample_id, k, "gold span aligns to zero answer tokens"});
          continue;
        }
        SpanOutcome o{sample.sample_id, k, g.passage_index, g.answer_char_start,
                      sample.answer.size(), {}};
        for (auto layer : options.layers) {
          AttributionConfig cfg{layer, options.anchor_count, options.max_window_len,
                                options.boundary_policy};
          o.predicted.push_back(attribute_span(trace, *span, cfg, segmentation).predicted_evidence);
        }
        out.outcomes.push_back(std::move(o));
      }
    } catch (const std::exception& e) {
      out.outcomes.clear();
      out.skipped.push_back({sample.sample_id, std::nullopt, e.what()});
    }
  });

  Subtask2Result result;
  for (auto& p : per) {
    for (auto& o : p.outcomes) result.outcomes.push_back(std::move(o));
    for (auto& s : p.skipped) result.skipped.push_back(std::move(s));
  }
  for (std::size_t li = 0; li < options.layers.size(); ++li) {
    LayerAccuracy acc{options.layers[li], 0, result.outcomes.size(), 0.0};
    for (const auto& o : result.outcomes) acc.correct += o.predicted[li] == o.gold_passage;
    acc.accuracy = ratio(acc.correct, acc.total);
    result.layers.push_back(acc);
  }
  for (std::size_t li = 1; li < result.layers.size(); ++li) {
    if (result.layers[li].accuracy > result.layers[result.best].accuracy) result.best = li;
  }
  return result;
}

std::vector<PositionBucket> position_buckets(const std::vector<PositionedOutcome>& outcomes) {
  std::map<std::size_t, PositionBucket> buckets;
  for (const auto& o : outcomes) {
    if (o.answer_length == 0) throw InputError("position bucket: zero-length answer");
    if (o.answer_char_start > o.answer_length) {
      throw InputError("position bucket: span start beyond the answer");
    }
    const std::size_t b = std::min<std::size_t>(9, 10 * o.answer_char_start / o.answer_length);
    auto& bucket = buckets[b];
    bucket.index = b;
    ++bucket.total;
    bucket.correct += o.correct;
  }
  std::vector<PositionBucket> out;
  for (auto& [_, b] : buckets) {
    b.accuracy = ratio(b.correct, b.total);
    out.push_back(b);
  }
  return out;
}

std::vector<PositionedOutcome> positioned_outcomes(const Subtask2Result& result,
                                                   std::size_t layer_slot) {
  std::vector<PositionedOutcome> out;
  for (const auto& o : result.outcomes) {
    out.push_back({o.answer_char_start, o.answer_length,
                   o.predicted.at(layer_slot) == o.gold_passage});
  }
  return out;
}

double random_baseline(const std::vector<std::size_t>& occurrence_counts) {
  if (occurrence_counts.empty()) throw InputError("random baseline over an empty subset");
  double sum = 0.0;
  for (auto m : occurrence_counts) {
    if (m == 0) throw InputError("occurrence count must be >= 1");
    sum += 1.0 / static_cast<double>(m);
  }
  return sum / static_cast<double>(occurrence_counts.size());
}

DisambiguationSubset disambiguation_subset(const std::vector<AnnotatedSample>& samples) {
  DisambiguationSubset subset;
  std::vector<std::size_t> counts;
  for (const auto& s : samples) {
    for (std::size_t k = 0; k < s.gold_spans.size(); ++k) {
      const auto needle = s.span_text(s.gold_spans[k]);
      if (needle.empty()) continue;
      std::size_t m = 0;
      for (const auto& p : s.passages) m += p.find(needle) != std::string::npos;
      if (m >= 2) {
        subset.items.push_back({s.sample_id, k, m});
        counts.push_back(m);
      }
    }
  }
  if (!counts.empty()) subset.random_baseline = random_baseline(counts);
  return subset;
}

std::string grid_csv(const Subtask1Result& r) {
  std::string out = "layer,theta,precision,recall,f1,tp,fp,fn\n";
  for (const auto& c : r.grid) {
    out += std::to_string(c.layer) + "," + fmt(c.theta) + "," + fmt(c.metrics.precision) + "," +
           fmt(c.metrics.recall) + "," + fmt(c.metrics.f1) + "," + std::to_string(c.metrics.counts.tp) +
           "," + std::to_string(c.metrics.counts.fp) + "," + std::to_string(c.metrics.counts.fn) + "\n";
  }
  return out;
}

std::string pr_curve_csv(const std::vector<PrPoint>& curve) {
  std::string out = "theta,precision,recall\n";
  for (const auto& p : curve) out += fmt(p.theta) + "," + fmt(p.precision) + "," + fmt(p.recall) + "\n";
  return out;
}

std::string layers_csv(const Subtask2Result& r) {
  std::string out = "layer,accuracy,correct,total\n";
  for (const auto& l : r.layers) {
    out += std::to_string(l.layer) + "," + fmt(l.accuracy) + "," + std::to_string(l.correct) + "," +
           std::to_string(l.total) + "\n";
  }
  return out;
}

std::string buckets_csv(const std::vector<PositionBucket>& buckets) {
  std::string out = "bucket,lower,upper,accuracy,correct,total\n";
  for (const auto& b : buckets) {
    out += std::to_string(b.index) + "," + fmt(static_cast<double>(b.index) / 10.0) + "," +
           fmt(static_cast<double>(b.index + 1) / 10.0) + "," + fmt(b.accuracy) + "," +
           std::to_string(b.correct) + "," + std::to_string(b.total) + "\n";
  }
  return out;
}

std::string subtask1_report_json(const Subtask1Result& r) {
  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["task"] = "subtask1";
  j["averaging"] = "micro";
  j["evaluated"] = r.evaluated;
  j["skipped"] = skipped_json(r.skipped);
  j["grid"] = json::array();
  for (const auto& c : r.grid) {
    auto cell = metrics_json(c.metrics);
    cell["layer"] = c.layer;
    cell["theta"] = c.theta;
    j["grid"].push_back(cell);
  }
  if (!r.grid.empty()) {
    auto best = metrics_json(r.grid[r.best].metrics);
    best["layer"] = r.grid[r.best].layer;
    best["theta"] = r.grid[r.best].theta;
    j["best"] = best;
  }
  j["pr_curve"] = json::array();
  for (const auto& p : r.pr_curve) {
    j["pr_curve"].push_back({{"theta", p.theta}, {"precision", p.precision}, {"recall", p.recall}});
  }
  return dump(j);
}

std::string subtask2_report_json(const Subtask2Result& r) {
  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["task"] = "subtask2";
  j["instances"] = r.outcomes.size();
  j["skipped"] = skipped_json(r.skipped);
  j["layers"] = layers_json(r);
  if (!r.layers.empty()) {
    j["best"] = {{"layer", r.layers[r.best].layer}, {"accuracy", r.layers[r.best].accuracy}};
  }
  return dump(j);
}

std::string positions_report_json(const std::vector<PositionBucket>& buckets, std::size_t layer) {
  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["task"] = "positions";
  j["layer"] = layer;
  j["buckets"] = json::array();
  for (const auto& b : buckets) {
    j["buckets"].push_back({{"bucket", b.index}, {"accuracy", b.accuracy}, {"correct", b.correct},
                            {"total", b.total}});
  }
  return dump(j);
}

std::string disambiguation_report_json(const DisambiguationSubset& subset,
                                       const Subtask2Result& r) {
  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["task"] = "disambiguation";
  j["subset_size"] = subset.items.size();
  j["random_baseline"] = subset.random_baseline ? json(*subset.random_baseline) : json(nullptr);
  j["layers"] = layers_json(r);
  j["skipped"] = skipped_json(r.skipped);
  if (!r.layers.empty()) {
    j["best"] = {{"layer", r.layers[r.best].layer}, {"accuracy", r.layers[r.best].accuracy}};
  }
  return dump(j);
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw EngineError("cannot write " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace tokattr
