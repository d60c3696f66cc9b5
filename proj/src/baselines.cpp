#include "tokattr/baselines.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "tokattr/diff.hpp"
#include "tokattr/error.hpp"
#include "tokattr/prompt.hpp"
#include "tokattr/simcore.hpp"
#include "tokattr/text.hpp"

namespace tokattr {
namespace {

using nlohmann::json;

void sort_ranked(std::vector<RankedPassage>& ranked) {
  std::stable_sort(ranked.begin(), ranked.end(), [](const RankedPassage& a, const RankedPassage& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.index < b.index;
  });
}

constexpr std::string_view kTask1 =
    "Document:\n{document}\n\nQuestion: {question}\nAnswer: {answer}\n\n"
    "The answer above was written from the numbered paragraphs of the document and copies some "
    "spans from them word for word. Rewrite the answer exactly as it is, but wrap every span "
    "copied word for word from a paragraph in square brackets together with the number of that "
    "paragraph, in the form [ N copied text ]. Do not change any other text.\nMarked answer:";

constexpr std::string_view kTask2 =
    "Document:\n{document}\n\nQuestion: {question}\nAnswer: {answer}\n\n"
    "The part of the answer enclosed in [] was copied from one of the numbered paragraphs of the "
    "document. Which paragraph is it taken from? Reply with the paragraph number.\nParagraph:";

constexpr std::string_view kParaphrase =
    "Document:\n{document}\nBased on the information contained in the document, answer the "
    "question with details to the best of your abilities. Think step by step and explain your "
    "answer if that will help better understand the answer. \nQ: {question} A:\n{answer}\n"
    "Given the above source passages, a question and an answer. The answer summarizes the given "
    "sources while explicitly copying spans from the sources. Paraphrase the non-entity parts of "
    "the answer within [] while keeping entities intact and rewrite in the same format as "
    "original answer.\nParaphrased Answer: ";

}  // namespace

std::vector<std::string> bm25_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (c >= 0x80 || std::isalnum(c)) {
      cur += static_cast<char>(c < 0x80 ? std::tolower(c) : c);
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

double bm25_idf(std::size_t passage_count, std::size_t document_frequency) {
  const double n = static_cast<double>(passage_count);
  const double df = static_cast<double>(document_frequency);
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

std::vector<RankedPassage> bm25_rank(std::string_view query, const std::vector<std::string>& passages,
                                     const Bm25Params& params) {
  if (passages.empty()) throw InputError("bm25 needs at least one passage");
  if (!(params.k1 > 0.0)) throw InputError("bm25 k1 must be positive");
  if (!(params.b >= 0.0 && params.b <= 1.0)) throw InputError("bm25 b must lie in [0, 1]");

  std::vector<std::unordered_map<std::string, std::size_t>> tf(passages.size());
  std::vector<double> length(passages.size());
  std::unordered_map<std::string, std::size_t> df;
  double total = 0.0;
  for (std::size_t p = 0; p < passages.size(); ++p) {
    const auto terms = bm25_tokenize(passages[p]);
    length[p] = static_cast<double>(terms.size());
    total += length[p];
    for (const auto& t : terms) ++tf[p][t];
    for (const auto& [t, _] : tf[p]) ++df[t];
  }
  const double avgdl = total / static_cast<double>(passages.size());
  const auto q = bm25_tokenize(query);

  std::vector<RankedPassage> ranked(passages.size());
  for (std::size_t p = 0; p < passages.size(); ++p) {
    ranked[p].index = p;
    const double norm = avgdl > 0.0 ? length[p] / avgdl : 1.0;
    double score = 0.0;
    for (const auto& t : q) {
      const auto it = tf[p].find(t);
      if (it == tf[p].end()) continue;
      const double f = static_cast<double>(it->second);
      score += bm25_idf(passages.size(), df[t]) * f * (params.k1 + 1.0) /
               (f + params.k1 * (1.0 - params.b + params.b * norm));
    }
    ranked[p].score = score;
  }
  sort_ranked(ranked);
  return ranked;
}

const std::vector<double>& EmbeddingFile::at(const std::string& id) const {
  const auto it = vectors.find(id);
  if (it == vectors.end()) throw InputError("embedding file has no vector for id '" + id + "'");
  return it->second;
}

EmbeddingFile parse_embeddings(std::istream& in) {
  EmbeddingFile file;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::is_blank(line)) continue;
    const auto where = "embeddings line " + std::to_string(line_no) + ": ";
    const auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw InputError(where + "not a JSON object");
    if (!j.contains("id") || !j["id"].is_string()) throw InputError(where + "missing string 'id'");
    if (!j.contains("vector") || !j["vector"].is_array()) {
      throw InputError(where + "missing array 'vector'");
    }
    std::vector<double> v;
    for (const auto& x : j["vector"]) {
      if (!x.is_number()) throw InputError(where + "vector holds a non-number");
      const double d = x.get<double>();
      if (!std::isfinite(d)) throw InputError(where + "vector holds a non-finite value");
      v.push_back(d);
    }
    if (v.empty()) throw InputError(where + "empty vector");
    if (file.dim == 0) file.dim = v.size();
    if (v.size() != file.dim) {
      throw InputError(where + "dimension " + std::to_string(v.size()) + ", expected " +
                       std::to_string(file.dim));
    }
    const auto id = j["id"].get<std::string>();
    if (!file.vectors.emplace(id, std::move(v)).second) {
      throw InputError(where + "duplicate id '" + id + "'");
    }
  }
  return file;
}

EmbeddingFile read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open embedding file " + path.string());
  return parse_embeddings(in);
}

std::vector<RankedPassage> dense_rank(const std::string& query_id,
                                      const std::vector<std::string>& passage_ids,
                                      const EmbeddingFile& embeddings) {
  if (passage_ids.empty()) throw InputError("dense ranking needs at least one passage");
  const auto& q = embeddings.at(query_id);
  std::vector<RankedPassage> ranked;
  for (std::size_t p = 0; p < passage_ids.size(); ++p) {
    const auto& v = embeddings.at(passage_ids[p]);
    ranked.push_back({p, cosine(std::span<const double>(q), std::span<const double>(v)).value});
  }
  sort_ranked(ranked);
  return ranked;
}

std::string dense_span_id(const std::string& sample_id, std::size_t span_index) {
  return sample_id + "/span" + std::to_string(span_index);
}

std::string dense_passage_id(const std::string& sample_id, std::size_t passage_index) {
  return sample_id + "/p" + std::to_string(passage_index);
}

std::string_view llm_template(std::string_view template_id) {
  if (template_id == kTask1Template) return kTask1;
  if (template_id == kTask2Template) return kTask2;
  if (template_id == kParaphraseTemplate) return kParaphrase;
  throw InputError("unknown LLM prompt template '" + std::string(template_id) + "'");
}

std::string numbered_passages(const std::vector<std::string>& passages) {
  std::string out;
  for (std::size_t i = 0; i < passages.size(); ++i) {
    if (i) out += "\n\n";
    out += "Paragraph " + std::to_string(i + 1) + ": " + passages[i];
  }
  return out;
}

std::string render_llm_prompt(std::string_view template_id, const std::vector<std::string>& passages,
                              std::string_view question, std::string_view answer) {
  return fill_template(llm_template(template_id), {{"document", numbered_passages(passages)},
                                                   {"question", std::string(question)},
                                                   {"answer", std::string(answer)}});
}

std::vector<MarkedSpan> superimpose_spans(std::string_view answer, const MarkupParse& parsed) {
  const auto alignment = diff::align_bytes(parsed.clean, answer);
  std::vector<MarkedSpan> out;
  auto flush = [&](std::size_t start, std::size_t end, std::size_t passage) {
    const auto piece = text::trim(answer.substr(start, end - start));
    if (piece.empty()) return;
    const auto s = static_cast<std::size_t>(piece.data() - answer.data());
    out.push_back({s, s + piece.size(), passage});
  };
  for (const auto& span : parsed.spans) {
    std::optional<std::size_t> run_start;
    std::size_t run_end = 0;
    for (std::size_t i = span.char_start; i < span.char_end; ++i) {
      const auto b = alignment.a_to_b[i];
      if (!b) continue;
      if (run_start && *b == run_end) {
        run_end = *b + 1;
        continue;
      }
      if (run_start) flush(*run_start, run_end, span.passage_index);
      run_start = *b;
      run_end = *b + 1;
    }
    if (run_start) flush(*run_start, run_end, span.passage_index);
  }
  std::sort(out.begin(), out.end(),
            [](const MarkedSpan& a, const MarkedSpan& b) { return a.char_start < b.char_start; });
  return out;
}

LlmSpanResult llm_identify_spans(ChatClient& client, const std::vector<std::string>& passages,
                                 std::string_view question, std::string_view answer) {
  const auto prompt = render_llm_prompt(kTask1Template, passages, question, answer);
  LlmSpanResult result;
  result.completion = client.complete({{"user", prompt}});
  result.parsed = parse_markup(text::trim(result.completion), passages.size());
  result.spans = superimpose_spans(answer, result.parsed);
  return result;
}

std::size_t parse_paragraph_number(std::string_view completion, std::size_t passage_count) {
  std::size_t end = completion.size();
  while (end > 0 && !std::isdigit(static_cast<unsigned char>(completion[end - 1]))) --end;
  if (end == 0) throw InputError("completion holds no paragraph number");
  std::size_t start = end;
  while (start > 0 && std::isdigit(static_cast<unsigned char>(completion[start - 1]))) --start;
  std::size_t value = 0;
  const auto [ptr, ec] = std::from_chars(completion.data() + start, completion.data() + end, value);
  const auto digits = std::string(completion.substr(start, end - start));
  if (ec != std::errc() || value < 1 || value > passage_count) {
    throw InputError("paragraph number " + digits + " out of range [1, " +
                     std::to_string(passage_count) + "]");
  }
  return value - 1;
}

std::string mark_single_span(std::string_view answer, std::size_t char_start, std::size_t char_end) {
  if (char_start >= char_end || char_end > answer.size()) {
    throw InputError("span [" + std::to_string(char_start) + ", " + std::to_string(char_end) +
                     ") is not inside the answer");
  }
  std::string out(answer.substr(0, char_start));
  out += '[';
  out += answer.substr(char_start, char_end - char_start);
  out += ']';
  out += answer.substr(char_end);
  return out;
}

std::size_t llm_attribute_span(ChatClient& client, const std::vector<std::string>& passages,
                               std::string_view question, std::string_view answer,
                               std::size_t span_char_start, std::size_t span_char_end,
                               std::string* completion_out) {
  const auto marked = mark_single_span(answer, span_char_start, span_char_end);
  const auto prompt = render_llm_prompt(kTask2Template, passages, question, marked);
  const auto completion = client.complete({{"user", prompt}});
  if (completion_out) *completion_out = completion;
  return parse_paragraph_number(completion, passages.size());
}

}  // namespace tokattr
