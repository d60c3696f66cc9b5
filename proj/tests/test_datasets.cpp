#include <doctest.h>

#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include "tokattr/datasets.hpp"
#include "tokattr/diff.hpp"
#include "tokattr/error.hpp"

using namespace tokattr;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Classic O(nm) dynamic program; independent of the Myers implementation.
std::size_t lcs_length(const std::u32string& a, const std::u32string& b) {
  std::vector<std::vector<std::size_t>> dp(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      dp[i][j] = a[i - 1] == b[j - 1] ? dp[i - 1][j - 1] + 1 : std::max(dp[i - 1][j], dp[i][j - 1]);
    }
  }
  return dp[a.size()][b.size()];
}

std::vector<std::string> sentences_of(std::string_view s) {
  std::vector<std::string> out;
  for (const auto& r : split_sentences(s)) out.emplace_back(s.substr(r.start, r.end - r.start));
  return out;
}

std::string matched_text(std::string_view s, const CharMatchSet& m) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += m.matched[i] ? s[i] : '_';
  return out;
}

}  // namespace

TEST_CASE("myers edit script is minimal and consistent") {
  std::mt19937_64 rng(47);
  std::uniform_int_distribution<int> len(0, 40), ch(0, 3);
  for (int trial = 0; trial < 300; ++trial) {
    std::u32string a, b;
    for (int i = len(rng); i > 0; --i) a += static_cast<char32_t>(U'a' + ch(rng));
    for (int i = len(rng); i > 0; --i) b += static_cast<char32_t>(U'a' + ch(rng));
    const auto script = diff::myers(a, b);
    std::size_t equal = 0, ai = 0, bi = 0;
    for (const auto& e : script) {
      CHECK(e.a_pos == ai);
      CHECK(e.b_pos == bi);
      if (e.op == diff::Op::kEqual) {
        CHECK(a.substr(e.a_pos, e.length) == b.substr(e.b_pos, e.length));
        equal += e.length;
        ai += e.length;
        bi += e.length;
      } else if (e.op == diff::Op::kDelete) {
        ai += e.length;
      } else {
        bi += e.length;
      }
    }
    CHECK(ai == a.size());
    CHECK(bi == b.size());
    CHECK(equal == lcs_length(a, b));
  }
}

TEST_CASE("char_diff_align") {
  SUBCASE("identical strings match fully") {
    const auto m = char_diff_align("same text", "same text");
    CHECK(m.count() == 9);
  }
  SUBCASE("disjoint alphabets match nothing") {
    CHECK(char_diff_align("abc", "xyz").count() == 0);
  }
  SUBCASE("a big cat / a red cat") {
    const auto m = char_diff_align("a big cat", "a red cat");
    CHECK(matched_text("a big cat", m) == "a ___ cat");
    CHECK(m.source_byte[6] == std::optional<std::size_t>(6));
  }
  SUBCASE("multibyte code points align as units") {
    const auto m = char_diff_align("Caf\xC3\xA9!", "Caf\xC3\xA9.");
    CHECK(m.count() == 5);
    CHECK_FALSE(m.matched[5]);
  }
}

TEST_CASE("split_sentences") {
  CHECK(sentences_of("The cat sat. Dogs bark loudly.") ==
        std::vector<std::string>{"The cat sat.", "Dogs bark loudly."});
  CHECK(sentences_of("Dr. Smith arrived. He left.") ==
        std::vector<std::string>{"Dr. Smith arrived.", "He left."});
  CHECK(split_sentences("").empty());
  CHECK(split_sentences("   \n ").empty());
  CHECK(sentences_of("Go now! Then stop? 42 is it.") ==
        std::vector<std::string>{"Go now!", "Then stop?", "42 is it."});
  CHECK(sentences_of("See the U.S. Army. Also e.g. Navy, vs. Marines etc. Done.") ==
        std::vector<std::string>{"See the U.S. Army.", "Also e.g. Navy, vs. Marines etc. Done."});
  CHECK(sentences_of("He said (\"no.\") Then left.") ==
        std::vector<std::string>{"He said (\"no.\")", "Then left."});
  CHECK(sentences_of("a.b. c. D") == std::vector<std::string>{"a.b. c.", "D"});
  CHECK(sentences_of("  Lead space. Trail space.  ") ==
        std::vector<std::string>{"Lead space.", "Trail space."});
}

TEST_CASE("split_sentences ranges are ordered, disjoint and in bounds on fuzzed input") {
  std::mt19937_64 rng(53);
  const std::string alphabet = "aZ9 .!?\"')\n\t\xC3\xA9Mr";
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1), len(0, 80);
  for (int trial = 0; trial < 2000; ++trial) {
    std::string s;
    for (std::size_t i = len(rng); i > 0; --i) s += alphabet[pick(rng)];
    std::size_t prev = 0;
    std::size_t non_ws_covered = 0;
    for (const auto& r : split_sentences(s)) {
      CHECK(r.start >= prev);
      CHECK(r.start < r.end);
      CHECK(r.end <= s.size());
      prev = r.end;
      for (std::size_t i = r.start; i < r.end; ++i) non_ws_covered += !std::isspace(static_cast<unsigned char>(s[i]));
    }
    std::size_t non_ws_total = 0;
    for (char c : s) non_ws_total += !std::isspace(static_cast<unsigned char>(c));
    CHECK(non_ws_covered == non_ws_total);
  }
}

TEST_CASE("quotesum markup") {
  SUBCASE("span is extracted and the answer cleaned") {
    const auto p = parse_markup("Built in [ 1 the 11th century ] by the king.", 2);
    CHECK(p.clean == "Built in the 11th century by the king.");
    REQUIRE(p.spans.size() == 1);
    CHECK(p.spans[0].passage_index == 0);
    CHECK(p.clean.substr(p.spans[0].char_start, p.spans[0].char_end - p.spans[0].char_start) ==
          "the 11th century");
  }
  SUBCASE("no brackets") { CHECK(parse_markup("Plain answer.", 1).spans.empty()); }
  SUBCASE("errors") {
    CHECK_THROWS_WITH_AS(parse_markup("[ 3 x ]", 2), doctest::Contains("out of range"), InputError);
    CHECK_THROWS_WITH_AS(parse_markup("[ 1 x", 2), doctest::Contains("unbalanced"), InputError);
    CHECK_THROWS_WITH_AS(parse_markup("x ]", 2), doctest::Contains("unbalanced"), InputError);
    CHECK_THROWS_WITH_AS(parse_markup("[ 1 a [ 2 b ] ]", 2), doctest::Contains("nested"), InputError);
    CHECK_THROWS_AS(parse_markup("[ x ]", 2), InputError);
    CHECK_THROWS_AS(parse_markup("[ 0 x ]", 2), InputError);
  }
  SUBCASE("compact form is accepted") {
    const auto p = parse_markup("[1 Ruth] won", 1);
    CHECK(p.clean == "Ruth won");
    CHECK(render_markup(p.clean, p.spans) == "[ 1 Ruth ] won");
  }
}

TEST_CASE("parse_quotesum and re-serialization") {
  const std::string canonical =
      R"({"answer":"The castle was [ 1 built in 1066 ] and [ 2 rebuilt in 1200 ].","id":"q1","passages":["It was built in 1066 by Normans.","It was rebuilt in 1200."],"question":"When?"})";
  std::istringstream in(canonical + "\n\n");
  const auto samples = parse_quotesum(in);
  REQUIRE(samples.size() == 1);
  const auto& s = samples[0];
  CHECK(s.answer == "The castle was built in 1066 and rebuilt in 1200.");
  REQUIRE(s.gold_spans.size() == 2);
  CHECK(s.gold_spans[1].passage_index == 1);
  CHECK(s.span_text(s.gold_spans[0]) == "built in 1066");
  CHECK(s.gold_spans[0].source_char_start == std::optional<std::size_t>(7));
  CHECK(quotesum_line(s) == canonical);

  std::istringstream alt(
      R"({"qid":"q2","question":"Q","source1":"A b","source2":"C d","answer":"[ 2 C d ] x"})");
  const auto alt_samples = parse_quotesum(alt);
  REQUIRE(alt_samples.size() == 1);
  CHECK(alt_samples[0].passages.size() == 2);
  CHECK(alt_samples[0].gold_spans[0].passage_index == 1);

  std::istringstream bad_header(R"({"question":"Q","passages":["a"],"answer":"x"})");
  CHECK_THROWS_WITH_AS(parse_quotesum(bad_header), doctest::Contains("line 1"), InputError);
  std::istringstream bad_range(R"({"id":"a","question":"Q","passages":["a"],"answer":"[ 2 x ]"})");
  CHECK_THROWS_WITH_AS(parse_quotesum(bad_range), doctest::Contains("out of range"), InputError);
}

TEST_CASE("annotated sample JSON lines round trip") {
  AnnotatedSample s{"id-1", "Q?", {"p0", "p1 text"}, "answer text", {{0, 6, 1, 3, 7}, {7, 11, 0, std::nullopt, std::nullopt}}};
  const auto line = sample_to_json_line(s);
  CHECK(sample_from_json_line(line) == s);
  CHECK(line.find("\"schema_version\":1") != std::string::npos);

  AnnotatedSample bad = s;
  bad.gold_spans[0].passage_index = 5;
  CHECK_THROWS_AS(validate_sample(bad), InputError);
  CHECK_THROWS_AS(sample_from_json_line(R"({"schema_version":9})"), InputError);
}

TEST_CASE("tokens_from_char_matches") {
  const std::string statement = "big cat";
  const auto tokens = curation_tokens(statement);
  REQUIRE(tokens.size() == 3);
  SUBCASE("fully matched") {
    const auto m = char_diff_align(statement, statement);
    CHECK(tokens_from_char_matches(statement, tokens, m) == std::vector<bool>{true, true, true});
  }
  SUBCASE("one unmatched character unmarks the token; whitespace is vacuous") {
    const auto m = char_diff_align(statement, "bog cat");
    CHECK(tokens_from_char_matches(statement, tokens, m) == std::vector<bool>{false, true, true});
  }
  SUBCASE("whitespace token between matched tokens") {
    const auto m = char_diff_align(statement, "bigcat");
    CHECK(tokens_from_char_matches(statement, tokens, m) == std::vector<bool>{true, true, true});
  }
  SUBCASE("ranges must tile") {
    const auto m = char_diff_align(statement, statement);
    CHECK_THROWS_AS(tokens_from_char_matches(statement, {{0, 3}, {4, 7}}, m), InputError);
  }
}

TEST_CASE("curation_tokens tiles text") {
  const std::string s = "Hi, it's  \xC3\xA9t\xC3\xA9!";
  const auto t = curation_tokens(s);
  std::vector<std::string> parts;
  for (const auto& r : t) parts.push_back(s.substr(r.start, r.end - r.start));
  CHECK(parts == std::vector<std::string>{"Hi", ",", " ", "it", "'", "s", "  ", "\xC3\xA9t\xC3\xA9", "!"});
}

TEST_CASE("curate examples") {
  RawVerifiabilityRecord r;
  r.record_id = "r";
  r.query = "q";
  r.response = "Intro. The tower is tall.";
  r.statement = "The tower is tall.";
  r.source_passages = {"The tower is tall. It is old."};
  r.citation_sentence_indices = {0};

  SUBCASE("verbatim statement gives one whole span") {
    const auto out = curate({r});
    REQUIRE(out.samples.size() == 1);
    REQUIRE(out.samples[0].gold_spans.size() == 1);
    CHECK(out.samples[0].span_text(out.samples[0].gold_spans[0]) == "The tower is tall.");
  }
  SUBCASE("multi-sentence mapping is dropped") {
    r.citation_sentence_indices = {0, 1};
    const auto out = curate({r});
    CHECK(out.samples.empty());
    CHECK(out.dropped == std::vector<DroppedRecord>{{"r", "multi-sentence mapping"}});
  }
  SUBCASE("surviving span of only stopwords and punctuation is removed") {
    r.statement = "Zap the ,";
    r.response = r.statement;
    r.source_passages = {"Of the , more."};
    const auto out = curate({r});
    CHECK(out.samples.empty());
    CHECK(out.dropped == std::vector<DroppedRecord>{{"r", "no verbatim spans"}});
  }
}

TEST_CASE("annotated characters are matched characters") {
  std::mt19937_64 rng(59);
  const std::vector<std::string> words{"the", "castle", "was", "built", "in", "1066", "by",
                                       "king", "river", "of", "stone", ",", "."};
  std::uniform_int_distribution<std::size_t> w(0, words.size() - 1), n(3, 12);
  for (int trial = 0; trial < 300; ++trial) {
    auto make = [&] {
      std::string s;
      for (std::size_t i = n(rng); i > 0; --i) s += (s.empty() ? "" : " ") + words[w(rng)];
      return s;
    };
    RawVerifiabilityRecord r;
    r.record_id = std::to_string(trial);
    r.statement = make();
    r.response = r.statement;
    r.source_passages = {make()};
    r.citation_sentence_indices = {0};
    const auto out = curate({r});
    if (out.samples.empty()) continue;
    const auto& sample = out.samples[0];
    const auto sentence_range = split_sentences(r.source_passages[0]).front();
    const auto m = char_diff_align(
        r.statement, std::string_view(r.source_passages[0])
                         .substr(sentence_range.start, sentence_range.end - sentence_range.start));
    for (const auto& g : sample.gold_spans) {
      for (std::size_t i = g.answer_char_start; i < g.answer_char_end; ++i) {
        if (r.statement[i] != ' ') CHECK(m.matched[i]);
      }
    }
  }
}

TEST_CASE("curation golden files") {
  const auto records = read_raw_records(TOKATTR_TEST_DATA "/curation/raw.jsonl");
  REQUIRE(records.size() == 20);
  const auto out = curate(records);
  std::string samples, dropped;
  for (const auto& s : out.samples) samples += sample_to_json_line(s) + "\n";
  for (const auto& d : out.dropped) dropped += dropped_to_json_line(d) + "\n";
  CHECK(samples == slurp(TOKATTR_TEST_DATA "/curation/expected_samples.jsonl"));
  CHECK(dropped == slurp(TOKATTR_TEST_DATA "/curation/expected_dropped.jsonl"));
  // Deterministic: a second run is byte-identical.
  const auto again = curate(records);
  std::string samples2;
  for (const auto& s : again.samples) samples2 += sample_to_json_line(s) + "\n";
  CHECK(samples2 == samples);
}
