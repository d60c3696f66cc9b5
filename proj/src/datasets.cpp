#include "tokattr/datasets.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tokattr/diff.hpp"
#include "tokattr/error.hpp"
#include "tokattr/text.hpp"

namespace tokattr {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 7> kAbbreviations = {"Mr.",  "Dr.", "e.g.", "i.e.",
                                                            "etc.", "vs.", "U.S."};

bool is_closer(char32_t cp) {
  switch (cp) {
    case U'"': case U'\'': case U')': case U']': case U'}':
    case 0x2019: case 0x201D: case 0x00BB:
      return true;
    default:
      return false;
  }
}

bool is_opener(char32_t cp) {
  switch (cp) {
    case U'"': case U'\'': case U'(': case U'[': case U'{':
    case 0x2018: case 0x201C: case 0x00AB:
      return true;
    default:
      return false;
  }
}

bool starts_sentence(char32_t cp) {
  return (cp >= U'A' && cp <= U'Z') || (cp >= U'0' && cp <= U'9');
}

bool is_abbreviation(std::string_view word) {
  if (word.size() == 2 && word[0] >= 'A' && word[0] <= 'Z' && word[1] == '.') return true;
  return std::find(kAbbreviations.begin(), kAbbreviations.end(), word) != kAbbreviations.end();
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

json parse_json_line(std::string_view line, std::size_t line_number) {
  if (!text::is_valid_utf8(line)) {
    throw InputError("line " + std::to_string(line_number) + ": not valid UTF-8");
  }
  try {
    json j = json::parse(line);
    if (!j.is_object()) {
      throw InputError("line " + std::to_string(line_number) + ": expected a JSON object");
    }
    return j;
  } catch (const json::parse_error& e) {
    throw InputError("line " + std::to_string(line_number) + ": " + e.what());
  }
}

std::string required_string(const json& j, std::initializer_list<const char*> keys,
                            std::size_t line_number) {
  for (const char* key : keys) {
    if (auto it = j.find(key); it != j.end() && it->is_string()) return it->get<std::string>();
  }
  throw InputError("line " + std::to_string(line_number) + ": missing string field \"" +
                   *keys.begin() + "\"");
}

void check_schema_version(const json& j, int supported, std::size_t line_number) {
  if (auto it = j.find("schema_version"); it != j.end()) {
    if (!it->is_number_integer() || it->get<int>() != supported) {
      throw InputError("line " + std::to_string(line_number) + ": unsupported schema_version " +
                       it->dump());
    }
  }
}

json gold_span_to_json(const GoldSpan& s) {
  json j = {{"answer_char_start", s.answer_char_start},
            {"answer_char_end", s.answer_char_end},
            {"passage_index", s.passage_index}};
  if (s.source_char_start) j["source_char_start"] = *s.source_char_start;
  if (s.source_char_end) j["source_char_end"] = *s.source_char_end;
  return j;
}

}  // namespace

// --- AnnotatedSample -------------------------------------------------------

void validate_sample(const AnnotatedSample& s) {
  std::size_t prev_end = 0;
  for (std::size_t i = 0; i < s.gold_spans.size(); ++i) {
    const auto& g = s.gold_spans[i];
    const std::string where = "sample " + s.sample_id + " span " + std::to_string(i);
    if (g.answer_char_start >= g.answer_char_end || g.answer_char_end > s.answer.size()) {
      throw InputError(where + ": char range outside the answer");
    }
    if (g.passage_index >= s.passages.size()) {
      throw InputError(where + ": passage_index " + std::to_string(g.passage_index) +
                       " out of range");
    }
    if (i > 0 && g.answer_char_start < prev_end) {
      throw InputError(where + ": overlaps the previous span");
    }
    prev_end = g.answer_char_end;
  }
}

std::string sample_to_json_line(const AnnotatedSample& s) {
  json spans = json::array();
  for (const auto& g : s.gold_spans) spans.push_back(gold_span_to_json(g));
  const json j = {{"schema_version", kSampleSchemaVersion},
                  {"sample_id", s.sample_id},
                  {"question", s.question},
                  {"passages", s.passages},
                  {"answer", s.answer},
                  {"gold_spans", std::move(spans)}};
  return j.dump();
}

AnnotatedSample sample_from_json_line(std::string_view line) {
  const json j = parse_json_line(line, 0);
  check_schema_version(j, kSampleSchemaVersion, 0);
  AnnotatedSample s;
  try {
    s.sample_id = j.at("sample_id").get<std::string>();
    s.question = j.at("question").get<std::string>();
    s.passages = j.at("passages").get<std::vector<std::string>>();
    s.answer = j.at("answer").get<std::string>();
    for (const auto& g : j.at("gold_spans")) {
      GoldSpan span;
      span.answer_char_start = g.at("answer_char_start").get<std::size_t>();
      span.answer_char_end = g.at("answer_char_end").get<std::size_t>();
      span.passage_index = g.at("passage_index").get<std::size_t>();
      if (g.contains("source_char_start")) {
        span.source_char_start = g.at("source_char_start").get<std::size_t>();
      }
      if (g.contains("source_char_end")) {
        span.source_char_end = g.at("source_char_end").get<std::size_t>();
      }
      s.gold_spans.push_back(span);
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed sample: ") + e.what());
  }
  validate_sample(s);
  return s;
}

void write_samples(const fs::path& path, const std::vector<AnnotatedSample>& samples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& s : samples) out << sample_to_json_line(s) << '\n';
}

std::vector<AnnotatedSample> read_samples(const fs::path& path) {
  std::vector<AnnotatedSample> out;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (text::is_blank(lines[i])) continue;
    try {
      out.push_back(sample_from_json_line(lines[i]));
    } catch (const InputError& e) {
      throw InputError(path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

// --- QuoteSum markup -------------------------------------------------------

MarkupParse parse_markup(std::string_view marked, std::size_t passage_count) {
  MarkupParse out;
  std::size_t i = 0;
  auto skip_spaces = [&] {
    while (i < marked.size() && (marked[i] == ' ' || marked[i] == '\t')) ++i;
  };
  while (i < marked.size()) {
    const char c = marked[i];
    if (c == ']') {
      throw InputError("unbalanced ']' at byte " + std::to_string(i));
    }
    if (c != '[') {
      out.clean += c;
      ++i;
      continue;
    }
    const std::size_t open = i++;
    skip_spaces();
    const std::size_t digits_start = i;
    while (i < marked.size() && marked[i] >= '0' && marked[i] <= '9') ++i;
    if (i == digits_start) {
      throw InputError("malformed span markup at byte " + std::to_string(open) +
                       ": expected a passage number after '['");
    }
    if (i - digits_start > 6) {
      throw InputError("passage number too long at byte " + std::to_string(open));
    }
    const std::size_t number = std::stoul(std::string(marked.substr(digits_start, i - digits_start)));
    if (i >= marked.size() || (marked[i] != ' ' && marked[i] != '\t')) {
      throw InputError("malformed span markup at byte " + std::to_string(open) +
                       ": expected whitespace after the passage number");
    }
    skip_spaces();
    const std::size_t body_start = i;
    while (i < marked.size() && marked[i] != ']') {
      if (marked[i] == '[') {
        throw InputError("unbalanced '[' at byte " + std::to_string(open) + " (nested span)");
      }
      ++i;
    }
    if (i >= marked.size()) {
      throw InputError("unbalanced '[' at byte " + std::to_string(open));
    }
    std::string_view body = marked.substr(body_start, i - body_start);
    while (!body.empty() && (body.back() == ' ' || body.back() == '\t')) body.remove_suffix(1);
    ++i;  // ']'
    if (body.empty()) {
      throw InputError("empty span at byte " + std::to_string(open));
    }
    if (number < 1 || number > passage_count) {
      throw InputError("passage number " + std::to_string(number) + " out of range [1, " +
                       std::to_string(passage_count) + "]");
    }
    MarkedSpan span;
    span.char_start = out.clean.size();
    out.clean += body;
    span.char_end = out.clean.size();
    span.passage_index = number - 1;
    out.spans.push_back(span);
  }
  return out;
}

std::string render_markup(std::string_view clean, const std::vector<MarkedSpan>& spans) {
  std::string out;
  std::size_t pos = 0;
  for (const auto& s : spans) {
    out += clean.substr(pos, s.char_start - pos);
    out += "[ " + std::to_string(s.passage_index + 1) + " ";
    out += clean.substr(s.char_start, s.char_end - s.char_start);
    out += " ]";
    pos = s.char_end;
  }
  out += clean.substr(pos);
  return out;
}

AnnotatedSample parse_quotesum_line(std::string_view line, std::size_t line_number) {
  const json j = parse_json_line(line, line_number);
  AnnotatedSample s;
  s.sample_id = required_string(j, {"id", "qid"}, line_number);
  s.question = required_string(j, {"question"}, line_number);
  if (auto it = j.find("passages"); it != j.end()) {
    if (!it->is_array()) {
      throw InputError("line " + std::to_string(line_number) + ": \"passages\" must be an array");
    }
    for (const auto& p : *it) {
      if (!p.is_string()) {
        throw InputError("line " + std::to_string(line_number) + ": passages must be strings");
      }
      s.passages.push_back(p.get<std::string>());
    }
  } else {
    for (int k = 1;; ++k) {
      auto it2 = j.find("source" + std::to_string(k));
      if (it2 == j.end() || !it2->is_string()) break;
      s.passages.push_back(it2->get<std::string>());
    }
  }
  if (s.passages.empty()) {
    throw InputError("line " + std::to_string(line_number) + ": no passages");
  }
  const std::string marked = required_string(j, {"answer"}, line_number);
  MarkupParse parsed;
  try {
    parsed = parse_markup(marked, s.passages.size());
  } catch (const InputError& e) {
    throw InputError("line " + std::to_string(line_number) + ": " + e.what());
  }
  s.answer = std::move(parsed.clean);
  for (const auto& m : parsed.spans) {
    GoldSpan g;
    g.answer_char_start = m.char_start;
    g.answer_char_end = m.char_end;
    g.passage_index = m.passage_index;
    const auto found = s.passages[m.passage_index].find(
        std::string_view(s.answer).substr(m.char_start, m.char_end - m.char_start));
    if (found != std::string::npos) {
      g.source_char_start = found;
      g.source_char_end = found + (m.char_end - m.char_start);
    }
    s.gold_spans.push_back(g);
  }
  return s;
}

std::vector<AnnotatedSample> parse_quotesum(std::istream& in) {
  std::vector<AnnotatedSample> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::is_blank(line)) continue;
    out.push_back(parse_quotesum_line(line, n));
  }
  return out;
}

std::vector<AnnotatedSample> parse_quotesum(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return parse_quotesum(in);
}

std::string quotesum_line(const AnnotatedSample& s) {
  std::vector<MarkedSpan> spans;
  for (const auto& g : s.gold_spans) {
    spans.push_back({g.answer_char_start, g.answer_char_end, g.passage_index});
  }
  const json j = {{"id", s.sample_id},
                  {"question", s.question},
                  {"passages", s.passages},
                  {"answer", render_markup(s.answer, spans)}};
  return j.dump();
}

// --- Sentences and character matching ---------------------------------------

std::vector<ByteRange> split_sentences(std::string_view s) {
  const auto cps = text::decode_utf8(s);
  std::vector<ByteRange> out;
  auto end_of = [&](std::size_t cp_index) {
    return cp_index < cps.size() ? cps[cp_index].byte_start : s.size();
  };
  auto emit = [&](std::size_t from, std::size_t to) {
    const auto trimmed = text::trim(s.substr(from, to - from));
    if (trimmed.empty()) return;
    const auto start = static_cast<std::size_t>(trimmed.data() - s.data());
    out.push_back({start, start + trimmed.size()});
  };

  std::size_t sentence_start = 0;  // byte offset
  for (std::size_t i = 0; i < cps.size(); ++i) {
    const char32_t c = cps[i].value;
    if (c != U'.' && c != U'!' && c != U'?') continue;
    std::size_t j = i + 1;
    while (j < cps.size() && is_closer(cps[j].value)) ++j;
    std::size_t k = j;
    while (k < cps.size() && text::is_space(cps[k].value)) ++k;
    if (k == j || k >= cps.size() || !starts_sentence(cps[k].value)) continue;
    if (c == U'.') {
      std::size_t w = i;
      while (w > 0 && !text::is_space(cps[w - 1].value)) --w;
      while (w < i && is_opener(cps[w].value)) ++w;
      const std::size_t wb = cps[w].byte_start;
      if (is_abbreviation(s.substr(wb, cps[i].byte_start + 1 - wb))) continue;
    }
    emit(sentence_start, end_of(j));
    sentence_start = end_of(j);
    i = j - 1;
  }
  emit(sentence_start, s.size());
  return out;
}

std::size_t CharMatchSet::count() const {
  return static_cast<std::size_t>(std::count(matched.begin(), matched.end(), true));
}

CharMatchSet char_diff_align(std::string_view statement, std::string_view source_sentence) {
  const auto alignment = diff::align_bytes(statement, source_sentence);
  CharMatchSet out;
  out.source_byte = alignment.a_to_b;
  out.matched.resize(statement.size());
  for (std::size_t i = 0; i < statement.size(); ++i) out.matched[i] = alignment.matched(i);
  return out;
}

std::vector<ByteRange> curation_tokens(std::string_view s) {
  enum class Kind { kWord, kSpace, kPunct };
  const auto cps = text::decode_utf8(s);
  auto kind_of = [](char32_t c) {
    if (text::is_space(c)) return Kind::kSpace;
    if (text::is_punctuation(c) && c != U'_') return Kind::kPunct;
    return Kind::kWord;
  };
  std::vector<ByteRange> out;
  std::size_t i = 0;
  while (i < cps.size()) {
    const Kind k = kind_of(cps[i].value);
    std::size_t j = i + 1;
    if (k != Kind::kPunct) {
      while (j < cps.size() && kind_of(cps[j].value) == k) ++j;
    }
    const std::size_t end = j < cps.size() ? cps[j].byte_start : s.size();
    out.push_back({cps[i].byte_start, end});
    i = j;
  }
  return out;
}

std::vector<bool> tokens_from_char_matches(std::string_view statement,
                                           const std::vector<ByteRange>& token_ranges,
                                           const CharMatchSet& matches) {
  if (matches.matched.size() != statement.size()) {
    throw InputError("match set does not belong to the statement");
  }
  std::size_t expect = 0;
  for (const auto& r : token_ranges) {
    if (r.start != expect || r.end <= r.start) {
      throw InputError("token ranges do not tile the statement at byte " + std::to_string(expect));
    }
    expect = r.end;
  }
  if (expect != statement.size()) {
    throw InputError("token ranges cover " + std::to_string(expect) + " of " +
                     std::to_string(statement.size()) + " bytes");
  }
  std::vector<bool> mask(token_ranges.size(), true);
  for (std::size_t t = 0; t < token_ranges.size(); ++t) {
    const auto [start, end] = token_ranges[t];
    for (const auto& cp : text::decode_utf8(statement.substr(start, end - start))) {
      if (text::is_space(cp.value)) continue;
      if (!matches.matched[start + cp.byte_start]) {
        mask[t] = false;
        break;
      }
    }
  }
  return mask;
}

// --- Raw records and curation ----------------------------------------------

std::vector<std::string> split_passages(std::string_view source_text) {
  std::vector<std::string> out;
  std::string current;
  std::size_t pos = 0;
  auto flush = [&] {
    const auto trimmed = text::trim(current);
    if (!trimmed.empty()) out.emplace_back(trimmed);
    current.clear();
  };
  while (pos <= source_text.size()) {
    const std::size_t nl = source_text.find('\n', pos);
    const std::string_view line =
        source_text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    if (text::is_blank(line)) {
      flush();
    } else {
      if (!current.empty()) current += '\n';
      current += line;
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  flush();
  return out;
}

RawVerifiabilityRecord raw_record_from_json_line(std::string_view line, std::size_t line_number) {
  const json j = parse_json_line(line, line_number);
  check_schema_version(j, kRawRecordSchemaVersion, line_number);
  RawVerifiabilityRecord r;
  r.record_id = j.contains("id") && j["id"].is_string() ? j["id"].get<std::string>()
                                                         : "record-" + std::to_string(line_number);
  r.query = required_string(j, {"query"}, line_number);
  r.response = required_string(j, {"response"}, line_number);
  r.statement = required_string(j, {"statement"}, line_number);
  const auto& src = j.contains("source_text") ? j["source_text"] : json();
  if (src.is_string()) {
    r.source_passages = split_passages(src.get<std::string>());
  } else if (src.is_array()) {
    for (const auto& p : src) {
      if (!p.is_string()) {
        throw InputError("line " + std::to_string(line_number) + ": source passages must be strings");
      }
      r.source_passages.push_back(p.get<std::string>());
    }
  } else {
    throw InputError("line " + std::to_string(line_number) + ": missing \"source_text\"");
  }
  if (auto it = j.find("citation_sentence_indices"); it != j.end()) {
    try {
      r.citation_sentence_indices = it->get<std::vector<std::size_t>>();
    } catch (const json::exception&) {
      throw InputError("line " + std::to_string(line_number) +
                       ": citation_sentence_indices must be non-negative integers");
    }
  } else if (auto it2 = j.find("citation_sentence_index"); it2 != j.end()) {
    if (!it2->is_number_unsigned()) {
      throw InputError("line " + std::to_string(line_number) +
                       ": citation_sentence_index must be a non-negative integer");
    }
    r.citation_sentence_indices.push_back(it2->get<std::size_t>());
  }
  return r;
}

std::vector<RawVerifiabilityRecord> read_raw_records(const fs::path& path) {
  std::vector<RawVerifiabilityRecord> out;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (text::is_blank(lines[i])) continue;
    out.push_back(raw_record_from_json_line(lines[i], i + 1));
  }
  return out;
}

CurationResult curate(const std::vector<RawVerifiabilityRecord>& records,
                      const StopList& stoplist) {
  CurationResult result;
  for (const auto& r : records) {
    auto drop = [&](std::string reason) {
      result.dropped.push_back({r.record_id, std::move(reason)});
    };
    if (r.statement.empty() || r.response.find(r.statement) == std::string::npos) {
      drop("statement not found in response");
      continue;
    }
    const std::set<std::size_t> cited(r.citation_sentence_indices.begin(),
                                      r.citation_sentence_indices.end());
    if (cited.empty()) {
      drop("no sentence mapping");
      continue;
    }
    if (cited.size() > 1) {
      drop("multi-sentence mapping");
      continue;
    }

    // Global sentence numbering across passages, in passage order.
    struct Located {
      std::size_t passage;
      ByteRange range;
    };
    std::vector<Located> sentences;
    for (std::size_t p = 0; p < r.source_passages.size(); ++p) {
      for (const auto& range : split_sentences(r.source_passages[p])) {
        sentences.push_back({p, range});
      }
    }
    const std::size_t target = *cited.begin();
    if (target >= sentences.size()) {
      drop("sentence index out of range");
      continue;
    }
    const auto& located = sentences[target];
    const std::string_view passage = r.source_passages[located.passage];
    const std::string_view sentence =
        passage.substr(located.range.start, located.range.end - located.range.start);

    const CharMatchSet matches = char_diff_align(r.statement, sentence);
    const auto tokens = curation_tokens(r.statement);
    const auto mask = tokens_from_char_matches(r.statement, tokens, matches);

    AnnotatedSample sample;
    sample.sample_id = r.record_id;
    sample.question = r.query;
    sample.passages = r.source_passages;
    sample.answer = r.statement;

    std::size_t t = 0;
    while (t < tokens.size()) {
      if (!mask[t]) {
        ++t;
        continue;
      }
      std::size_t u = t;
      while (u < tokens.size() && mask[u]) ++u;
      const std::string_view run =
          std::string_view(r.statement).substr(tokens[t].start, tokens[u - 1].end - tokens[t].start);
      const std::string_view trimmed = text::trim(run);
      t = u;
      if (trimmed.empty() || stoplist.only_stopwords_or_punctuation(trimmed)) continue;

      GoldSpan g;
      g.answer_char_start = static_cast<std::size_t>(trimmed.data() - r.statement.data());
      g.answer_char_end = g.answer_char_start + trimmed.size();
      g.passage_index = located.passage;
      const auto first = matches.source_byte[g.answer_char_start];
      const auto last = matches.source_byte[g.answer_char_end - 1];
      if (first && last) {
        g.source_char_start = located.range.start + *first;
        g.source_char_end = located.range.start + *last + 1;
      }
      sample.gold_spans.push_back(g);
    }
    if (sample.gold_spans.empty()) {
      drop("no verbatim spans");
      continue;
    }
    result.samples.push_back(std::move(sample));
  }
  return result;
}

std::string dropped_to_json_line(const DroppedRecord& d) {
  return json{{"record_id", d.record_id}, {"reason", d.reason}}.dump();
}

}  // namespace tokattr
