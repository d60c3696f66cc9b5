#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "synthetic.hpp"
#include "tempdir.hpp"
#include "tokattr/answer_map.hpp"
#include "tokattr/error.hpp"
#include "tokattr/evaluation.hpp"

using namespace tokattr;
using tokattr::testing::CopyFixture;
using tokattr::testing::CopyOptions;
using tokattr::testing::TempDir;

namespace {

std::vector<bool> mask_of(std::size_t n, std::initializer_list<std::size_t> on) {
  std::vector<bool> m(n, false);
  for (auto i : on) m[i] = true;
  return m;
}

std::vector<EvalItem> corpus(const TempDir& dir, std::vector<CopyFixture>& fixtures,
                             const CopyOptions& options, std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    fixtures.push_back(tokattr::testing::make_copy_fixture(rng, options, "s" + std::to_string(i)));
  }
  tokattr::testing::write_copy_corpus(dir.path(), fixtures);
  return pair_with_traces(read_samples(dir / "samples.jsonl"), dir / "traces");
}

}  // namespace

TEST_CASE("token_prf examples") {
  const auto m = token_prf(mask_of(6, {1, 2, 3}), mask_of(6, {2, 3, 4}));
  CHECK(m.precision == doctest::Approx(2.0 / 3.0));
  CHECK(m.recall == doctest::Approx(2.0 / 3.0));
  CHECK(m.f1 == doctest::Approx(2.0 / 3.0));
  CHECK(m.counts == Counts{2, 1, 1});

  const auto same = token_prf(mask_of(4, {0, 3}), mask_of(4, {0, 3}));
  CHECK(same.f1 == 1.0);
  const auto empty = token_prf(mask_of(4, {}), mask_of(4, {}));
  CHECK(empty.precision == 1.0);
  CHECK(empty.recall == 1.0);
  CHECK(empty.f1 == 1.0);
  const auto miss = token_prf(mask_of(4, {}), mask_of(4, {1}));
  CHECK(miss.precision == 0.0);
  CHECK(miss.recall == 0.0);
  CHECK(miss.f1 == 0.0);
  CHECK_THROWS_AS(token_prf(mask_of(2, {}), mask_of(3, {})), InputError);
}

TEST_CASE("micro aggregation pools counts") {
  Counts total;
  total += count_tokens(mask_of(3, {0}), mask_of(3, {0, 1}));
  total += count_tokens(mask_of(2, {0, 1}), mask_of(2, {1}));
  CHECK(total == Counts{2, 1, 1});
}

TEST_CASE("pr_curve") {
  SUBCASE("theta -1 predicts everything") {
    const std::vector<double> s{0.2, 0.9, -0.5};
    const auto c = pr_curve(s, mask_of(3, {1}));
    REQUIRE_FALSE(c.empty());
    CHECK(c[0].theta == -1.0);
    CHECK(c[0].recall == 1.0);
  }
  SUBCASE("all scores 1, all gold") {
    const std::vector<double> s{1.0, 1.0, 1.0};
    const auto c = pr_curve(s, mask_of(3, {0, 1, 2}));
    REQUIRE(c.size() == 1);
    CHECK(c[0].precision == 1.0);
    CHECK(c[0].recall == 1.0);
  }
  SUBCASE("six-token hand case against brute force") {
    const std::vector<double> s{0.1, 0.8, 0.4, 0.8, 0.95, 0.3};
    const auto gold = mask_of(6, {1, 3, 4});
    const auto c = pr_curve(s, gold);
    const std::vector<double> thetas{-1.0, 0.1, 0.3, 0.4, 0.8};
    REQUIRE(c.size() == thetas.size());
    for (std::size_t k = 0; k < thetas.size(); ++k) {
      std::size_t tp = 0, pred = 0;
      for (std::size_t i = 0; i < 6; ++i) {
        if (s[i] > thetas[k]) {
          ++pred;
          tp += gold[i];
        }
      }
      CHECK(c[k].theta == thetas[k]);
      CHECK(c[k].precision == doctest::Approx(double(tp) / pred));
      CHECK(c[k].recall == doctest::Approx(double(tp) / 3.0));
    }
    CHECK(c.back().precision == 1.0);
    CHECK(c.back().recall == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("recall is non-increasing on random inputs") {
    std::mt19937_64 rng(81);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> s(1 + trial % 40);
      std::vector<bool> g(s.size());
      for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] = std::round(u(rng) * 10) / 10;
        g[i] = u(rng) > 0;
      }
      const auto c = pr_curve(s, g);
      for (std::size_t k = 1; k < c.size(); ++k) {
        CHECK(c[k].theta > c[k - 1].theta);
        CHECK(c[k].recall <= c[k - 1].recall);
      }
    }
  }
}

TEST_CASE("paragraph_accuracy") {
  CHECK(paragraph_accuracy({0, 1, 2, 0}, {0, 1, 2, 1}) == 0.75);
  CHECK(paragraph_accuracy({3, 1}, {3, 1}) == 1.0);
  CHECK_THROWS_AS(paragraph_accuracy({}, {}), InputError);
  CHECK_THROWS_AS(paragraph_accuracy({1}, {1, 2}), InputError);

  std::mt19937_64 rng(83);
  std::vector<std::size_t> golds(50), preds;
  for (auto& g : golds) g = rng() % 4;
  preds = golds;
  std::shuffle(preds.begin(), preds.end(), rng);
  std::size_t hand = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) hand += preds[i] == golds[i];
  CHECK(paragraph_accuracy(preds, golds) == doctest::Approx(hand / 50.0));
}

TEST_CASE("grid parsing") {
  CHECK(parse_layer_list("0..3") == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(parse_layer_list("4,1") == std::vector<std::size_t>{4, 1});
  CHECK_THROWS_AS(parse_layer_list("3..1"), InputError);
  CHECK_THROWS_AS(parse_layer_list("x"), InputError);
  const auto t = parse_theta_grid("0.30:0.95:0.05");
  REQUIRE(t.size() == 14);
  CHECK(t.front() == 0.3);
  CHECK(t[1] == 0.35);
  CHECK(t.back() == 0.95);
  CHECK(parse_theta_grid("0.5") == std::vector<double>{0.5});
  CHECK(parse_theta_grid("0.2,0.7") == std::vector<double>{0.2, 0.7});
  CHECK_THROWS_AS(parse_theta_grid("0.1:0.5:0"), InputError);
  CHECK_THROWS_AS(parse_theta_grid("a:b:c"), InputError);
}

TEST_CASE("answer token map") {
  std::mt19937_64 rng(85);
  const auto f = tokattr::testing::make_copy_fixture(rng, {}, "x");
  const auto map = map_answer(f.trace, f.sample.answer);
  REQUIRE(map.ranges.size() == f.doc.answer.size());
  CHECK(map.ranges.front().start == 0);
  CHECK(map.ranges.back().end == f.sample.answer.size());
  const auto gold = tokens_overlapping(map, f.sample.answer,
                                       {{f.sample.gold_spans[0].answer_char_start,
                                         f.sample.gold_spans[0].answer_char_end}},
                                       OverlapRule::kAny);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto& s = f.answer_spans[0];
    CHECK(gold[i] == (i >= s.start && i < s.end));
  }
  // A range covering only the space before a token: any-overlap selects it,
  // the non-whitespace rule does not.
  const auto space = map.ranges[1].start;
  CHECK(span_for_chars(map, f.sample.answer, space, space + 1, OverlapRule::kAny) == SpanRef{1, 2});
  CHECK_FALSE(span_for_chars(map, f.sample.answer, space, space + 1, OverlapRule::kNonWhitespace));
  CHECK_THROWS_AS(map_answer(f.trace, "not the answer"), InputError);
}

TEST_CASE("subtask1 sweep on a one-hot corpus") {
  TempDir dir;
  std::vector<CopyFixture> fixtures;
  const auto items = corpus(dir, fixtures, {}, 8, 87);
  Subtask1Options opt;
  opt.layers = {0, 1};
  opt.thetas = {0.2, 0.5, 0.8};
  opt.jobs = 3;
  const auto r = sweep_subtask1(items, opt);
  CHECK(r.evaluated == 8);
  CHECK(r.skipped.empty());
  REQUIRE(r.grid.size() == 6);
  for (const auto& c : r.grid) CHECK(c.metrics.f1 == 1.0);
  CHECK(r.grid[r.best].metrics.f1 == 1.0);

  opt.thetas = {0.5};
  const auto single = sweep_subtask1(items, opt);
  CHECK(single.grid.size() == opt.layers.size());

  SUBCASE("parallel and serial runs agree byte for byte") {
    opt.jobs = 1;
    const auto a = sweep_subtask1(items, opt);
    opt.jobs = 4;
    const auto b = sweep_subtask1(items, opt);
    CHECK(subtask1_report_json(a) == subtask1_report_json(b));
    CHECK(grid_csv(a) == grid_csv(b));
  }
  SUBCASE("missing traces are reported and skipped") {
    auto broken = items;
    broken[2].trace_dir = dir / "nowhere";
    const auto s = sweep_subtask1(broken, opt);
    CHECK(s.evaluated == 7);
    REQUIRE(s.skipped.size() == 1);
    CHECK(s.skipped[0].sample_id == "s2");
  }
}

TEST_CASE("best cell attains the grid maximum") {
  std::mt19937_64 rng(89);
  TempDir dir;
  std::vector<EvalItem> items;
  for (int i = 0; i < 5; ++i) {
    auto t = tokattr::testing::make_random_trace(rng, {6, 5}, 2, 6, 8, 3);
    const auto id = "r" + std::to_string(i);
    write_trace(t, dir / id);
    AnnotatedSample s;
    s.sample_id = id;
    s.answer = segment_text(t, Segment::kAnswer);
    s.passages = {"a", "b"};
    s.gold_spans.push_back({0, s.answer.size() / 2, 0, std::nullopt, std::nullopt});
    items.push_back({s, dir / id});
  }
  Subtask1Options opt;
  opt.layers = {0, 1, 2};
  opt.thetas = parse_theta_grid("-0.5:0.9:0.1");
  opt.filter_spans = false;
  const auto r = sweep_subtask1(items, opt);
  CHECK(r.skipped.empty());
  for (const auto& c : r.grid) CHECK(r.grid[r.best].metrics.f1 >= c.metrics.f1);
  for (std::size_t k = 1; k < r.pr_curve.size(); ++k) CHECK(r.pr_curve[k].recall <= r.pr_curve[k - 1].recall);
}

TEST_CASE("subtask2 sweep") {
  TempDir dir;
  std::vector<CopyFixture> fixtures;
  SUBCASE("unique spans are attributed at every layer") {
    const auto items = corpus(dir, fixtures, {}, 8, 91);
    Subtask2Options opt;
    opt.layers = {0, 1};
    opt.jobs = 2;
    const auto r = sweep_subtask2(items, opt);
    CHECK(r.skipped.empty());
    CHECK(r.outcomes.size() == 16);
    for (const auto& l : r.layers) CHECK(l.accuracy == 1.0);
  }
  SUBCASE("single-passage documents") {
    CopyOptions o;
    o.passages = 1;
    o.passage_len = 20;
    o.segmented = false;
    const auto items = corpus(dir, fixtures, o, 4, 93);
    Subtask2Options opt;
    opt.layers = {1};
    const auto r = sweep_subtask2(items, opt);
    CHECK(r.layers[0].accuracy == 1.0);
    CHECK(r.layers[0].total == 8);
  }
  SUBCASE("corrupted golds are skipped and counted") {
    auto items = corpus(dir, fixtures, {}, 6, 95);
    const auto n = items[1].sample.answer.size();
    items[1].sample.gold_spans[0] = {n, n, 0, std::nullopt, std::nullopt};
    items[4].sample.gold_spans[1] = {n, n, 0, std::nullopt, std::nullopt};
    Subtask2Options opt;
    opt.layers = {0};
    const auto r = sweep_subtask2(items, opt);
    CHECK(r.skipped.size() == 2);
    CHECK(r.outcomes.size() == 10);
    CHECK(r.skipped[0] == SkippedItem{"s1", 0, "gold span aligns to zero answer tokens"});
  }
}

TEST_CASE("position buckets") {
  const auto b = position_buckets({{0, 10, true}, {95, 100, false}, {100, 100, true}});
  REQUIRE(b.size() == 2);
  CHECK(b[0].index == 0);
  CHECK(b[1].index == 9);
  CHECK(b[1].total == 2);
  CHECK(b[1].accuracy == 0.5);
  CHECK_THROWS_AS(position_buckets({{0, 0, true}}), InputError);

  // Ten spans, hand counted: buckets 0 (2/2), 3 (1/3), 5 (0/1), 9 (3/4).
  std::vector<PositionedOutcome> ten{{0, 20, true},   {1, 20, true},   {6, 20, false},
                                     {7, 20, true},   {7, 20, false},  {11, 20, false},
                                     {19, 20, true},  {18, 20, true},  {19, 20, false},
                                     {20, 20, true}};
  const auto h = position_buckets(ten);
  REQUIRE(h.size() == 4);
  CHECK((h[0].index == 0 && h[0].correct == 2 && h[0].total == 2));
  CHECK((h[1].index == 3 && h[1].correct == 1 && h[1].total == 3));
  CHECK((h[2].index == 5 && h[2].correct == 0 && h[2].total == 1));
  CHECK((h[3].index == 9 && h[3].correct == 3 && h[3].total == 4));
  CHECK(buckets_csv(h).rfind("bucket,lower,upper,accuracy,correct,total\n0,0,0.1,1,2,2\n", 0) == 0);
}

TEST_CASE("disambiguation subset") {
  AnnotatedSample a{"a", "q", {"the castle stood", "a hill", "near the castle"}, "see the castle", {{4, 14, 2, std::nullopt, std::nullopt}}};
  AnnotatedSample b{"b", "q", {"one", "two"}, "one", {{0, 3, 0, std::nullopt, std::nullopt}}};
  const auto s = disambiguation_subset({a, b});
  REQUIRE(s.items.size() == 1);
  CHECK(s.items[0].sample_id == "a");
  CHECK(s.items[0].occurrences == 2);
  CHECK(*s.random_baseline == 0.5);
  CHECK_FALSE(disambiguation_subset({b}).random_baseline);

  CHECK(random_baseline({2, 2, 4}) == 5.0 / 12.0);
  CHECK_THROWS_AS(random_baseline({}), InputError);
}

TEST_CASE("metric identities on random masks") {
  std::mt19937_64 rng(97);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = rng() % 30;
    std::vector<bool> p(n), g(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = rng() % 3 == 0;
      g[i] = rng() % 3 == 0;
    }
    const auto m = token_prf(p, g);
    if (m.counts.tp + m.counts.fp + m.counts.fn == 0) {
      CHECK(m.f1 == 1.0);
    } else if (m.precision + m.recall > 0) {
      CHECK(m.f1 == doctest::Approx(2 * m.precision * m.recall / (m.precision + m.recall)));
    } else {
      CHECK(m.f1 == 0.0);
    }
  }
}
