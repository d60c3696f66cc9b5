#include "synthetic.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace tokattr::testing {

TraceBuilder::TraceBuilder(std::size_t layers, std::size_t dim, std::string model)
    : layers_(layers), dim_(dim), model_(std::move(model)) {}

TraceBuilder& TraceBuilder::add(Segment segment, std::string text, std::int64_t token_id,
                                const std::vector<std::vector<float>>& vectors,
                                std::optional<std::uint32_t> passage) {
  if (vectors.size() != layers_) throw std::invalid_argument("one vector per layer required");
  TokenRecord t;
  t.index = tokens_.size();
  t.token_id = token_id;
  t.segment = segment;
  t.char_start = prompt_.size();
  t.char_end = prompt_.size() + text.size();
  t.passage_index = passage;
  prompt_ += text;
  t.text = std::move(text);
  tokens_.push_back(std::move(t));
  vectors_.push_back(vectors);
  return *this;
}

TraceBuilder& TraceBuilder::add_flat(Segment segment, std::string text, std::int64_t token_id,
                                     const std::vector<float>& vector,
                                     std::optional<std::uint32_t> passage) {
  return add(segment, std::move(text), token_id,
             std::vector<std::vector<float>>(layers_, vector), passage);
}

Trace TraceBuilder::build() const {
  Trace trace;
  auto& m = trace.manifest;
  m.model_name = model_;
  m.layer_count = layers_;
  m.hidden_dim = dim_;
  m.token_count = tokens_.size();
  m.tokens = tokens_;
  m.prompt_template_id = "inst-v1";
  m.prompt = prompt_;
  trace.states = HiddenStates(layers_, tokens_.size(), dim_);
  for (std::size_t t = 0; t < tokens_.size(); ++t) {
    for (std::size_t l = 0; l < layers_; ++l) {
      for (std::size_t d = 0; d < dim_; ++d) trace.states.at(l, t, d) = vectors_[t][l][d];
    }
  }
  return trace;
}

std::string word_for(std::int64_t id) { return "w" + std::to_string(id); }

Trace make_onehot_trace(const SyntheticDoc& doc, std::size_t dim, std::size_t layers,
                        bool segmented) {
  TraceBuilder b(layers, dim, "onehot-synthetic");
  const std::vector<float> zero(dim, 0.0f);
  auto onehot = [&](std::int64_t id) {
    if (id < 1 || static_cast<std::size_t>(id) >= dim) {
      throw std::invalid_argument("token id " + std::to_string(id) + " outside one-hot range");
    }
    std::vector<float> v(dim, 0.0f);
    v[static_cast<std::size_t>(id)] = 1.0f;
    return v;
  };
  b.add_flat(Segment::kTemplate, "[INST]\nDocument:\n", 0, zero);
  for (std::size_t p = 0; p < doc.passages.size(); ++p) {
    const auto& ids = doc.passages[p];
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const std::string lead = (i == 0) ? (p == 0 ? "" : "\n\n") : " ";
      std::optional<std::uint32_t> passage;
      if (segmented) passage = static_cast<std::uint32_t>(p);
      b.add_flat(Segment::kDocument, lead + word_for(ids[i]), ids[i], onehot(ids[i]), passage);
    }
  }
  b.add_flat(Segment::kTemplate, "\nBased on the document.\nQ:", 0, zero);
  for (auto id : doc.question) b.add_flat(Segment::kQuestion, " " + word_for(id), id, onehot(id));
  b.add_flat(Segment::kTemplate, " A:\n[/INST]\n", 0, zero);
  for (std::size_t i = 0; i < doc.answer.size(); ++i) {
    const auto id = doc.answer[i];
    b.add_flat(Segment::kAnswer, (i == 0 ? "" : " ") + word_for(id), id, onehot(id));
  }
  return b.build();
}

Trace make_random_trace(std::mt19937_64& rng, const std::vector<std::size_t>& passage_lengths,
                        std::size_t question_len, std::size_t answer_len, std::size_t dim,
                        std::size_t layers) {
  TraceBuilder b(layers, dim, "random-synthetic");
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::uniform_int_distribution<std::int64_t> ids(1, 50000);
  auto random_layers = [&] {
    std::vector<std::vector<float>> out(layers, std::vector<float>(dim));
    for (auto& row : out) {
      for (float& x : row) x = normal(rng);
    }
    return out;
  };
  b.add(Segment::kTemplate, "[INST]\nDocument:\n", ids(rng), random_layers());
  for (std::size_t p = 0; p < passage_lengths.size(); ++p) {
    for (std::size_t i = 0; i < passage_lengths[p]; ++i) {
      const auto id = ids(rng);
      const std::string lead = (i == 0) ? (p == 0 ? "" : "\n\n") : " ";
      b.add(Segment::kDocument, lead + word_for(id), id, random_layers(),
            static_cast<std::uint32_t>(p));
    }
  }
  b.add(Segment::kTemplate, "\nQ:", ids(rng), random_layers());
  for (std::size_t i = 0; i < question_len; ++i) {
    const auto id = ids(rng);
    b.add(Segment::kQuestion, " " + word_for(id), id, random_layers());
  }
  b.add(Segment::kTemplate, " A:\n[/INST]\n", ids(rng), random_layers());
  for (std::size_t i = 0; i < answer_len; ++i) {
    const auto id = ids(rng);
    b.add(Segment::kAnswer, (i == 0 ? "" : " ") + word_for(id), id, random_layers());
  }
  return b.build();
}

}  // namespace tokattr::testing

namespace tokattr::testing {

std::size_t copy_fixture_dim(const CopyOptions& o) {
  return 1 + o.passages * o.passage_len + o.question_len + (o.spans + 1) * o.glue_len;
}

CopyFixture make_copy_fixture(std::mt19937_64& rng, const CopyOptions& o,
                              const std::string& sample_id) {
  const std::size_t doc_len = o.passages * o.passage_len;
  std::vector<std::int64_t> ids(copy_fixture_dim(o) - 1);
  std::iota(ids.begin(), ids.end(), 1);
  std::shuffle(ids.begin(), ids.end(), rng);
  std::size_t next = 0;

  CopyFixture f;
  for (std::size_t p = 0; p < o.passages; ++p) {
    f.doc.passages.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(next),
                                ids.begin() + static_cast<std::ptrdiff_t>(next + o.passage_len));
    next += o.passage_len;
  }
  std::vector<std::int64_t> doc_ids;
  for (const auto& p : f.doc.passages) doc_ids.insert(doc_ids.end(), p.begin(), p.end());
  for (std::size_t i = 0; i < o.question_len; ++i) f.doc.question.push_back(ids[next++]);

  // Disjoint source windows, each inside one passage.
  std::vector<bool> used(doc_len, false);
  std::uniform_int_distribution<std::size_t> len_dist(o.span_len_min, o.span_len_max);
  std::uniform_int_distribution<std::size_t> passage_dist(0, o.passages - 1);
  while (f.sources.size() < o.spans) {
    const std::size_t len = std::min(len_dist(rng), o.passage_len);
    const std::size_t p = passage_dist(rng);
    std::uniform_int_distribution<std::size_t> start_dist(0, o.passage_len - len);
    const std::size_t start = p * o.passage_len + start_dist(rng);
    bool free = true;
    for (std::size_t i = start; i < start + len; ++i) free = free && !used[i];
    if (!free) continue;
    for (std::size_t i = start; i < start + len; ++i) used[i] = true;
    f.sources.push_back({start, start + len});
    f.source_passages.push_back(p);
  }

  auto glue = [&] {
    for (std::size_t g = 0; g < o.glue_len; ++g) {
      f.doc.answer.push_back(ids[next++]);
      f.copied.push_back(false);
    }
  };
  glue();
  for (const auto& src : f.sources) {
    const std::size_t a = f.doc.answer.size();
    for (std::size_t i = src.start; i < src.end; ++i) {
      f.doc.answer.push_back(doc_ids[i]);
      f.copied.push_back(true);
    }
    f.answer_spans.push_back({a, f.doc.answer.size()});
    glue();
  }

  f.trace = make_onehot_trace(f.doc, copy_fixture_dim(o), o.layers, o.segmented);

  // Answer text and per-token offsets, mirroring make_onehot_trace.
  std::vector<std::size_t> starts;
  std::string answer;
  for (std::size_t i = 0; i < f.doc.answer.size(); ++i) {
    if (i) answer += ' ';
    starts.push_back(answer.size());
    answer += word_for(f.doc.answer[i]);
  }
  f.sample.sample_id = sample_id;
  f.sample.answer = answer;
  for (auto id : f.doc.question) f.sample.question += (f.sample.question.empty() ? "" : " ") + word_for(id);
  for (const auto& p : f.doc.passages) {
    std::string text;
    for (auto id : p) text += (text.empty() ? "" : " ") + word_for(id);
    f.sample.passages.push_back(text);
  }
  for (std::size_t k = 0; k < f.answer_spans.size(); ++k) {
    const auto& s = f.answer_spans[k];
    const std::size_t cs = starts[s.start];
    const std::size_t ce = starts[s.end - 1] + word_for(f.doc.answer[s.end - 1]).size();
    f.sample.gold_spans.push_back({cs, ce, f.source_passages[k], std::nullopt, std::nullopt});
  }
  return f;
}

void write_copy_corpus(const std::filesystem::path& dir, const std::vector<CopyFixture>& fixtures) {
  std::filesystem::create_directories(dir / "traces");
  std::vector<AnnotatedSample> samples;
  for (const auto& f : fixtures) {
    samples.push_back(f.sample);
    write_trace(f.trace, dir / "traces" / f.sample.sample_id);
  }
  write_samples(dir / "samples.jsonl", samples);
}

}  // namespace tokattr::testing
