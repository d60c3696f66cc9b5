#include <json.hpp>

#include "tokattr/baselines.hpp"
#include "tokattr/error.hpp"
#include "tokattr/evaluation.hpp"
#include "tokattr/parallel.hpp"
#include "tokattr/text.hpp"

namespace tokattr {
namespace {

using nlohmann::json;

template <class Fn>
std::vector<ParagraphPrediction> per_span(const std::vector<AnnotatedSample>& samples, Fn&& fn) {
  std::vector<ParagraphPrediction> out;
  for (const auto& s : samples) {
    for (std::size_t k = 0; k < s.gold_spans.size(); ++k) {
      ParagraphPrediction p;
      p.sample_id = s.sample_id;
      p.span_index = k;
      p.gold = s.gold_spans[k].passage_index;
      try {
        fn(s, k, p);
      } catch (const std::exception& e) {
        p.predicted.reset();
        p.error = e.what();
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

json ranking_json(const std::vector<RankedPassage>& r) {
  json out = json::array();
  for (const auto& x : r) out.push_back({{"index", x.index}, {"score", x.score}});
  return out;
}

}  // namespace

std::vector<ParagraphPrediction> run_bm25_baseline(const std::vector<AnnotatedSample>& samples,
                                                   const Bm25Params& params) {
  return per_span(samples, [&](const AnnotatedSample& s, std::size_t k, ParagraphPrediction& p) {
    p.ranking = bm25_rank(s.span_text(s.gold_spans[k]), s.passages, params);
    p.predicted = p.ranking.front().index;
  });
}

std::vector<ParagraphPrediction> run_dense_baseline(const std::vector<AnnotatedSample>& samples,
                                                    const EmbeddingFile& embeddings) {
  return per_span(samples, [&](const AnnotatedSample& s, std::size_t k, ParagraphPrediction& p) {
    std::vector<std::string> ids;
    for (std::size_t j = 0; j < s.passages.size(); ++j) ids.push_back(dense_passage_id(s.sample_id, j));
    p.ranking = dense_rank(dense_span_id(s.sample_id, k), ids, embeddings);
    p.predicted = p.ranking.front().index;
  });
}

std::vector<ParagraphPrediction> run_llm_attr_baseline(const std::vector<AnnotatedSample>& samples,
                                                       ChatClient& client, std::size_t jobs) {
  auto out = per_span(samples, [](const AnnotatedSample&, std::size_t, ParagraphPrediction&) {});
  std::vector<const AnnotatedSample*> owner;
  for (const auto& s : samples) {
    for (std::size_t k = 0; k < s.gold_spans.size(); ++k) owner.push_back(&s);
  }
  parallel_for(out.size(), jobs, [&](std::size_t i) {
    auto& p = out[i];
    const auto& s = *owner[i];
    const auto& g = s.gold_spans[p.span_index];
    try {
      p.predicted = llm_attribute_span(client, s.passages, s.question, s.answer, g.answer_char_start,
                                       g.answer_char_end, &p.completion);
    } catch (const std::exception& e) {
      p.error = e.what();
    }
  });
  return out;
}

std::vector<bool> span_token_mask(std::string_view answer, const std::vector<ByteRange>& tokens,
                                  const std::vector<ByteRange>& spans) {
  std::vector<bool> mask(tokens.size(), false);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto& tok = tokens[t];
    if (text::is_blank(answer.substr(tok.start, tok.end - tok.start))) continue;
    for (const auto& s : spans) {
      if (std::max(tok.start, s.start) < std::min(tok.end, s.end)) {
        mask[t] = true;
        break;
      }
    }
  }
  return mask;
}

std::vector<SpanPrediction> run_llm_spans_baseline(const std::vector<AnnotatedSample>& samples,
                                                   ChatClient& client, std::size_t jobs) {
  std::vector<SpanPrediction> out(samples.size());
  parallel_for(samples.size(), jobs, [&](std::size_t i) {
    const auto& s = samples[i];
    auto& p = out[i];
    p.sample_id = s.sample_id;
    const auto tokens = curation_tokens(s.answer);
    std::vector<ByteRange> gold;
    for (const auto& g : s.gold_spans) gold.push_back({g.answer_char_start, g.answer_char_end});
    p.gold = span_token_mask(s.answer, tokens, gold);
    try {
      auto r = llm_identify_spans(client, s.passages, s.question, s.answer);
      p.completion = std::move(r.completion);
      p.spans = std::move(r.spans);
      std::vector<ByteRange> pred;
      for (const auto& m : p.spans) pred.push_back({m.char_start, m.char_end});
      p.pred = span_token_mask(s.answer, tokens, pred);
    } catch (const std::exception& e) {
      p.error = e.what();
      p.pred.clear();
    }
  });
  return out;
}

std::string paragraph_predictions_jsonl(const std::vector<ParagraphPrediction>& predictions) {
  std::string out;
  for (const auto& p : predictions) {
    json j{{"sample_id", p.sample_id}, {"span_index", p.span_index}, {"gold", p.gold}};
    j["predicted"] = p.predicted ? json(*p.predicted) : json(nullptr);
    if (!p.ranking.empty()) j["ranking"] = ranking_json(p.ranking);
    if (!p.completion.empty()) j["completion"] = p.completion;
    if (!p.error.empty()) j["error"] = p.error;
    out += j.dump() + "\n";
  }
  return out;
}

std::string span_predictions_jsonl(const std::vector<SpanPrediction>& predictions) {
  std::string out;
  for (const auto& p : predictions) {
    json j{{"sample_id", p.sample_id}, {"completion", p.completion}};
    j["spans"] = json::array();
    for (const auto& s : p.spans) {
      j["spans"].push_back({{"answer_char_start", s.char_start},
                            {"answer_char_end", s.char_end},
                            {"passage_index", s.passage_index}});
    }
    if (!p.error.empty()) j["error"] = p.error;
    out += j.dump() + "\n";
  }
  return out;
}

std::string paragraph_baseline_report_json(const std::string& baseline,
                                           const std::vector<ParagraphPrediction>& predictions) {
  std::vector<std::size_t> preds, golds;
  json skipped = json::array();
  for (const auto& p : predictions) {
    if (!p.predicted) {
      skipped.push_back({{"sample_id", p.sample_id}, {"span_index", p.span_index}, {"reason", p.error}});
      continue;
    }
    preds.push_back(*p.predicted);
    golds.push_back(p.gold);
  }
  json j{{"schema_version", kReportSchemaVersion},
         {"task", "subtask2"},
         {"baseline", baseline},
         {"instances", preds.size()},
         {"skipped", skipped}};
  j["accuracy"] = preds.empty() ? json(nullptr) : json(paragraph_accuracy(preds, golds));
  return j.dump(2) + "\n";
}

std::string span_baseline_report_json(const std::string& baseline,
                                      const std::vector<SpanPrediction>& predictions) {
  Counts total;
  std::size_t evaluated = 0;
  json skipped = json::array();
  for (const auto& p : predictions) {
    if (!p.error.empty()) {
      skipped.push_back({{"sample_id", p.sample_id}, {"span_index", nullptr}, {"reason", p.error}});
      continue;
    }
    ++evaluated;
    total += count_tokens(p.pred, p.gold);
  }
  const auto m = metrics_from_counts(total);
  json j{{"schema_version", kReportSchemaVersion},
         {"task", "subtask1"},
         {"baseline", baseline},
         {"averaging", "micro"},
         {"evaluated", evaluated},
         {"skipped", skipped},
         {"precision", m.precision},
         {"recall", m.recall},
         {"f1", m.f1},
         {"tp", m.counts.tp},
         {"fp", m.counts.fp},
         {"fn", m.counts.fn}};
  return j.dump(2) + "\n";
}

}  // namespace tokattr
