// tokattr command-line entry point. One subcommand per process; results go
// to files (or stdout for attribute), diagnostics to stderr.
//
// Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tokattr/answer_map.hpp"
#include "tokattr/attribution.hpp"
#include "tokattr/baselines.hpp"
#include "tokattr/datasets.hpp"
#include "tokattr/detection.hpp"
#include "tokattr/error.hpp"
#include "tokattr/evaluation.hpp"
#include "tokattr/extractor.hpp"
#include "tokattr/llm.hpp"
#include "tokattr/service.hpp"
#include "tokattr/trace.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tokattr;

namespace {

constexpr int kCliSchemaVersion = 1;

std::pair<std::size_t, std::size_t> parse_range(const std::string& flag, const std::string& value) {
  const auto colon = value.find(':');
  auto number = [&](const std::string& s) -> std::size_t {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
      throw InputError(flag + " expects s:e with non-negative integers, got '" + value + "'");
    }
    return std::stoull(s);
  };
  if (colon == std::string::npos) throw InputError(flag + " expects s:e, got '" + value + "'");
  const auto s = number(value.substr(0, colon));
  const auto e = number(value.substr(colon + 1));
  if (e <= s) throw InputError(flag + " needs s < e, got '" + value + "'");
  return {s, e};
}

std::optional<BoundaryPolicy> parse_boundary(const std::string& value) {
  if (value.empty() || value == "auto") return std::nullopt;
  if (value == "respect_evidence") return BoundaryPolicy::kRespectEvidence;
  if (value == "ignore_evidence") return BoundaryPolicy::kIgnoreEvidence;
  throw InputError("--boundary must be respect_evidence, ignore_evidence or auto");
}

std::string boundary_name(std::optional<BoundaryPolicy> b) {
  if (!b) return "auto";
  return *b == BoundaryPolicy::kRespectEvidence ? "respect_evidence" : "ignore_evidence";
}

// Timestamps stay out of the payload files and go here instead.
void append_run_log(const fs::path& log_path, const std::vector<std::string>& argv,
                    const std::string& outcome) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
  std::string line = std::string(stamp) + "\t" + outcome + "\t";
  for (std::size_t i = 0; i < argv.size(); ++i) line += (i ? " " : "") + argv[i];
  std::error_code ec;
  if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path(), ec);
  std::ofstream(log_path, std::ios::app) << line << "\n";
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw EngineError("cannot create " + dir.string() + ": " + ec.message());
}

StopList load_stoplist(const std::string& path) {
  return path.empty() ? StopList::english_v1() : StopList::from_file(path);
}

struct GridArgs {
  std::vector<std::string> sweep;
  std::string layers;
  std::string thetas;

  // --sweep items fold into layers/thetas; naming a grid twice is an error.
  void resolve() {
    for (const auto& item : sweep) {
      const auto eq = item.find('=');
      const auto key = item.substr(0, eq);
      const auto value = eq == std::string::npos ? std::string() : item.substr(eq + 1);
      std::string* slot = key == "layers" ? &layers : key == "thetas" ? &thetas : nullptr;
      if (!slot || eq == std::string::npos) {
        throw InputError("--sweep items are layers=SPEC or thetas=SPEC, got '" + item + "'");
      }
      if (!slot->empty()) throw InputError(key + " given twice");
      *slot = value;
    }
  }
};

void print_skipped(const std::vector<SkippedItem>& skipped) {
  for (const auto& s : skipped) {
    std::cerr << "skipped " << s.sample_id;
    if (s.span_index) std::cerr << " span " << *s.span_index;
    std::cerr << ": " << s.reason << "\n";
  }
}

std::unique_ptr<ChatClient> make_chat_client(const std::string& endpoint, const std::string& model,
                                             const std::string& replay, const std::string& transcripts,
                                             int timeout_ms, int retries, std::size_t max_in_flight,
                                             const std::string& api_key_env) {
  if (model.empty()) throw InputError("--model is required for LLM baselines");
  if (!replay.empty()) return std::make_unique<ReplayChatClient>(model, replay);
  if (endpoint.empty()) throw InputError("--endpoint or --replay is required for LLM baselines");
  LlmClientConfig cfg;
  cfg.endpoint = endpoint;
  cfg.model = model;
  cfg.timeout = std::chrono::milliseconds(timeout_ms);
  cfg.retries = retries;
  cfg.max_in_flight = max_in_flight;
  cfg.api_key_env = api_key_env;
  if (!transcripts.empty()) cfg.transcript_dir = transcripts;
  validate_llm_config(cfg);
  return std::make_unique<HttpChatClient>(cfg);
}

int run(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);

  CLI::App app{"Token-level attribution over hidden-state traces"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", std::string(kEngineVersion));

  std::function<void()> action;
  fs::path log_path;

  // --- detect ---------------------------------------------------------------
  std::string d_trace, d_out, d_stop;
  std::size_t d_layer = 0;
  double d_theta = 0.5;
  bool d_no_filter = false;
  auto* detect_cmd = app.add_subcommand("detect", "Score answer tokens and extract copied spans");
  detect_cmd->add_option("--trace", d_trace, "Trace directory")->required()->check(CLI::ExistingDirectory);
  detect_cmd->add_option("--layer", d_layer, "Layer index")->required();
  detect_cmd->add_option("--theta", d_theta, "Similarity threshold (strict)");
  detect_cmd->add_option("--out", d_out, "Output JSON file (stdout when omitted)");
  detect_cmd->add_option("--stopwords", d_stop, "Stopword list")->check(CLI::ExistingFile);
  detect_cmd->add_flag("--no-filter", d_no_filter, "Keep stopword-only spans");
  detect_cmd->callback([&] {
    action = [&] {
      const auto trace = read_trace(d_trace);
      if (d_layer >= trace.manifest.layer_count) {
        throw InputError("--layer " + std::to_string(d_layer) + " out of range; trace has " +
                         std::to_string(trace.manifest.layer_count) + " layers");
      }
      const auto stop = load_stoplist(d_stop);
      const auto r = detect(trace, {d_layer, d_theta}, stop, !d_no_filter);
      json j{{"schema_version", kCliSchemaVersion},
             {"engine_version", kEngineVersion},
             {"model_name", trace.manifest.model_name},
             {"layer", d_layer},
             {"theta", d_theta},
             {"filter", !d_no_filter},
             {"scores", r.scores},
             {"mask", r.mask}};
      j["spans"] = json::array();
      for (const auto& s : r.spans) {
        double mean = 0.0;
        for (auto i = s.start; i < s.end; ++i) mean += r.scores[i];
        mean /= static_cast<double>(s.end - s.start);
        j["spans"].push_back({{"token_start", s.start},
                              {"token_end", s.end},
                              {"prompt_char_start", s.char_start},
                              {"prompt_char_end", s.char_end},
                              {"text", s.text},
                              {"mean_score", mean}});
      }
      const auto text = j.dump(2) + "\n";
      if (d_out.empty()) {
        std::cout << text;
      } else {
        write_text_file(d_out, text);
        log_path = d_out + ".log";
      }
    };
  });

  // --- attribute --------------------------------------------------------------
  std::string a_trace, a_span, a_span_chars, a_boundary = "auto", a_out;
  std::size_t a_layer = 0, a_k = kDefaultAnchorCount;
  std::optional<std::size_t> a_l;
  auto* attr_cmd = app.add_subcommand("attribute", "Find the document window an answer span came from");
  attr_cmd->add_option("--trace", a_trace, "Trace directory")->required()->check(CLI::ExistingDirectory);
  auto* span_opt = attr_cmd->add_option("--span", a_span, "Answer-token span s:e");
  auto* chars_opt = attr_cmd->add_option("--span-chars", a_span_chars, "Answer character span s:e");
  span_opt->excludes(chars_opt);
  attr_cmd->add_option("--layer", a_layer, "Layer index")->required();
  attr_cmd->add_option("-K,--anchors", a_k, "Anchor count");
  attr_cmd->add_option("-L,--max-window", a_l, "Maximum window length");
  attr_cmd->add_option("--boundary", a_boundary, "respect_evidence, ignore_evidence or auto");
  attr_cmd->add_option("--out", a_out, "Also write the JSON here");
  attr_cmd->callback([&] {
    if (a_span.empty() && a_span_chars.empty()) {
      throw CLI::RequiredError("--span or --span-chars");
    }
    action = [&] {
      const auto trace = read_trace(a_trace);
      if (a_layer >= trace.manifest.layer_count) {
        throw InputError("--layer " + std::to_string(a_layer) + " out of range; trace has " +
                         std::to_string(trace.manifest.layer_count) + " layers");
      }
      SpanRef span;
      if (!a_span.empty()) {
        const auto [s, e] = parse_range("--span", a_span);
        span = {s, e};
      } else {
        const auto [s, e] = parse_range("--span-chars", a_span_chars);
        const auto answer =
            answer_from_trace(trace, segment_text(trace, Segment::kDocument),
                              segment_text(trace, Segment::kQuestion), trace.manifest.prompt_template_id);
        const auto map = map_answer(trace, answer);
        const auto resolved = span_for_chars(map, answer, s, e, OverlapRule::kNonWhitespace);
        if (!resolved) throw InputError("--span-chars " + a_span_chars + " covers no answer token");
        span = *resolved;
      }
      AttributionConfig cfg;
      cfg.layer = a_layer;
      cfg.anchor_count = a_k;
      cfg.max_window_len = a_l;
      cfg.boundary_policy = parse_boundary(a_boundary);
      const auto segmentation = EvidenceSegmentation::from_trace(trace);
      const auto r = attribute_span(trace, span, cfg, segmentation);
      const auto [pcs, pce] = document_char_range(trace, r.window);
      const auto& prompt_tokens = trace.manifest.tokens;
      const auto doc = segment_indices(trace, Segment::kDocument);
      std::string text;
      for (auto i = r.window.start; i < r.window.end; ++i) text += prompt_tokens[doc[i]].text;
      json j{{"schema_version", kCliSchemaVersion},
             {"engine_version", kEngineVersion},
             {"model_name", trace.manifest.model_name},
             {"layer", a_layer},
             {"K", a_k},
             {"L", a_l ? json(*a_l) : json(span.length() + kDefaultWindowSlack)},
             {"boundary", boundary_name(cfg.boundary_policy)},
             {"span", {{"token_start", span.start}, {"token_end", span.end}}},
             {"window",
              {{"token_start", r.window.start},
               {"token_end", r.window.end},
               {"prompt_char_start", pcs},
               {"prompt_char_end", pce},
               {"text", text}}},
             {"score", r.score},
             {"degenerate", r.degenerate},
             {"candidates_scored", r.candidates_scored}};
      j["evidence_scores"] = json::array();
      for (const auto& e : r.evidence_scores) j["evidence_scores"].push_back(e ? json(*e) : json(nullptr));
      j["predicted_evidence"] = r.predicted_evidence ? json(*r.predicted_evidence) : json(nullptr);
      j["anchors"] = json::array();
      for (const auto& a : r.anchors) {
        j["anchors"].push_back({{"doc_index", a.doc_index}, {"similarity", a.similarity}});
      }
      const auto out = j.dump(2) + "\n";
      std::cout << out;
      if (!a_out.empty()) {
        write_text_file(a_out, out);
        log_path = a_out + ".log";
      }
    };
  });

  // --- eval -------------------------------------------------------------------
  std::string e_dataset, e_traces, e_out = ".", e_boundary = "auto", e_stop;
  GridArgs e_grid;
  std::size_t e_jobs = 1, e_k = kDefaultAnchorCount;
  std::optional<std::size_t> e_l;
  std::optional<std::size_t> e_layer;
  bool e_no_filter = false;
  auto* eval_cmd = app.add_subcommand("eval", "Dataset-scale evaluation");
  eval_cmd->require_subcommand(1, 1);
  auto add_eval_common = [&](CLI::App* sub, bool thetas) {
    sub->add_option("--dataset", e_dataset, "Annotated samples (JSONL)")->required()->check(CLI::ExistingFile);
    sub->add_option("--traces", e_traces, "Directory of per-sample traces")
        ->required()
        ->check(CLI::ExistingDirectory);
    sub->add_option("--sweep", e_grid.sweep, "layers=SPEC [thetas=SPEC]")->expected(1, 2);
    sub->add_option("--layers", e_grid.layers, "Layer list: a..b or a,b,c");
    if (thetas) sub->add_option("--thetas", e_grid.thetas, "Theta grid: lo:hi:step or a,b,c");
    sub->add_option("--out", e_out, "Output directory");
    sub->add_option("--jobs", e_jobs, "Worker threads")->check(CLI::PositiveNumber);
    if (!thetas) {
      sub->add_option("-K,--anchors", e_k, "Anchor count");
      sub->add_option("-L,--max-window", e_l, "Maximum window length");
      sub->add_option("--boundary", e_boundary, "respect_evidence, ignore_evidence or auto");
    }
  };
  auto* s1 = eval_cmd->add_subcommand("subtask1", "Copied-token detection over a layer/theta grid");
  add_eval_common(s1, true);
  s1->add_option("--stopwords", e_stop, "Stopword list")->check(CLI::ExistingFile);
  s1->add_flag("--no-filter", e_no_filter, "Score the raw threshold mask");
  auto* s2 = eval_cmd->add_subcommand("subtask2", "Paragraph attribution accuracy per layer");
  add_eval_common(s2, false);
  auto* pos = eval_cmd->add_subcommand("positions", "Subtask 2 accuracy by span position");
  add_eval_common(pos, false);
  pos->add_option("--layer", e_layer, "Layer to bucket (default: best of the sweep)");
  auto* dis = eval_cmd->add_subcommand("disambig", "Subtask 2 on spans found in several passages");
  add_eval_common(dis, false);

  auto load_items = [&] {
    e_grid.resolve();
    return pair_with_traces(read_samples(e_dataset), e_traces);
  };
  auto layers_or_throw = [&] {
    if (e_grid.layers.empty()) throw InputError("a layer grid is required (--sweep layers=SPEC or --layers)");
    return parse_layer_list(e_grid.layers);
  };
  auto subtask2_options = [&](std::vector<std::size_t> layers) {
    Subtask2Options o;
    o.layers = std::move(layers);
    o.anchor_count = e_k;
    o.max_window_len = e_l;
    o.boundary_policy = parse_boundary(e_boundary);
    o.jobs = e_jobs;
    return o;
  };

  s1->callback([&] {
    action = [&] {
      const auto items = load_items();
      if (e_grid.thetas.empty()) throw InputError("a theta grid is required (--sweep thetas=SPEC or --thetas)");
      Subtask1Options o{layers_or_throw(), parse_theta_grid(e_grid.thetas), e_jobs, !e_no_filter};
      const auto r = sweep_subtask1(items, o, load_stoplist(e_stop));
      print_skipped(r.skipped);
      ensure_dir(e_out);
      write_text_file(fs::path(e_out) / "grid.csv", grid_csv(r));
      write_text_file(fs::path(e_out) / "pr_curve.csv", pr_curve_csv(r.pr_curve));
      write_text_file(fs::path(e_out) / "report.json", subtask1_report_json(r));
      const auto& b = r.grid[r.best];
      std::cerr << "best layer " << b.layer << " theta " << b.theta << " f1 " << b.metrics.f1 << "\n";
      log_path = fs::path(e_out) / "run.log";
    };
  });
  s2->callback([&] {
    action = [&] {
      const auto items = load_items();
      const auto r = sweep_subtask2(items, subtask2_options(layers_or_throw()));
      print_skipped(r.skipped);
      ensure_dir(e_out);
      write_text_file(fs::path(e_out) / "layers.csv", layers_csv(r));
      write_text_file(fs::path(e_out) / "report.json", subtask2_report_json(r));
      if (!r.layers.empty()) {
        std::cerr << "best layer " << r.layers[r.best].layer << " accuracy " << r.layers[r.best].accuracy << "\n";
      }
      log_path = fs::path(e_out) / "run.log";
    };
  });
  pos->callback([&] {
    action = [&] {
      const auto items = load_items();
      std::vector<std::size_t> layers;
      if (e_layer) {
        if (!e_grid.layers.empty()) throw InputError("--layer and a layer grid are mutually exclusive");
        layers = {*e_layer};
      } else {
        layers = layers_or_throw();
      }
      const auto r = sweep_subtask2(items, subtask2_options(layers));
      print_skipped(r.skipped);
      if (r.layers.empty()) throw InputError("no layers evaluated");
      const auto buckets = position_buckets(positioned_outcomes(r, r.best));
      ensure_dir(e_out);
      write_text_file(fs::path(e_out) / "buckets.csv", buckets_csv(buckets));
      write_text_file(fs::path(e_out) / "report.json", positions_report_json(buckets, r.layers[r.best].layer));
      log_path = fs::path(e_out) / "run.log";
    };
  });
  dis->callback([&] {
    action = [&] {
      const auto items = load_items();
      std::vector<AnnotatedSample> samples;
      for (const auto& it : items) samples.push_back(it.sample);
      const auto subset = disambiguation_subset(samples);
      auto o = subtask2_options(layers_or_throw());
      o.only.emplace();
      for (const auto& it : subset.items) o.only->insert({it.sample_id, it.span_index});
      const auto r = sweep_subtask2(items, o);
      print_skipped(r.skipped);
      ensure_dir(e_out);
      write_text_file(fs::path(e_out) / "layers.csv", layers_csv(r));
      write_text_file(fs::path(e_out) / "report.json", disambiguation_report_json(subset, r));
      log_path = fs::path(e_out) / "run.log";
    };
  });

  // --- sweep: both subtasks over one grid ---------------------------------------
  auto* sweep_cmd = app.add_subcommand("sweep", "Run subtask 1 and subtask 2 over one layer grid");
  add_eval_common(sweep_cmd, true);
  sweep_cmd->add_option("-K,--anchors", e_k, "Anchor count");
  sweep_cmd->add_option("-L,--max-window", e_l, "Maximum window length");
  sweep_cmd->add_option("--boundary", e_boundary, "respect_evidence, ignore_evidence or auto");
  sweep_cmd->add_option("--stopwords", e_stop, "Stopword list")->check(CLI::ExistingFile);
  sweep_cmd->callback([&] {
    action = [&] {
      const auto items = load_items();
      if (e_grid.thetas.empty()) throw InputError("a theta grid is required (--sweep thetas=SPEC or --thetas)");
      const auto layers = layers_or_throw();
      const auto r1 = sweep_subtask1(items, {layers, parse_theta_grid(e_grid.thetas), e_jobs, true},
                                     load_stoplist(e_stop));
      const auto r2 = sweep_subtask2(items, subtask2_options(layers));
      print_skipped(r1.skipped);
      print_skipped(r2.skipped);
      const fs::path d1 = fs::path(e_out) / "subtask1", d2 = fs::path(e_out) / "subtask2";
      ensure_dir(d1);
      ensure_dir(d2);
      write_text_file(d1 / "grid.csv", grid_csv(r1));
      write_text_file(d1 / "pr_curve.csv", pr_curve_csv(r1.pr_curve));
      write_text_file(d1 / "report.json", subtask1_report_json(r1));
      write_text_file(d2 / "layers.csv", layers_csv(r2));
      write_text_file(d2 / "report.json", subtask2_report_json(r2));
      log_path = fs::path(e_out) / "run.log";
    };
  });

  // --- curate -----------------------------------------------------------------
  std::string c_input, c_out, c_dropped, c_stop;
  auto* curate_cmd = app.add_subcommand("curate", "Build span annotations from verifiability records");
  curate_cmd->add_option("--input", c_input, "Raw records (JSONL)")->required()->check(CLI::ExistingFile);
  curate_cmd->add_option("--out", c_out, "Annotated samples (JSONL)")->required();
  curate_cmd->add_option("--dropped", c_dropped, "Dropped records with reasons (JSONL)");
  curate_cmd->add_option("--stopwords", c_stop, "Stopword list")->check(CLI::ExistingFile);
  curate_cmd->callback([&] {
    action = [&] {
      const auto r = curate(read_raw_records(c_input), load_stoplist(c_stop));
      write_samples(c_out, r.samples);
      if (!c_dropped.empty()) {
        std::string text;
        for (const auto& d : r.dropped) text += dropped_to_json_line(d) + "\n";
        write_text_file(c_dropped, text);
      }
      std::cerr << "kept " << r.samples.size() << ", dropped " << r.dropped.size() << "\n";
      log_path = c_out + ".log";
    };
  });

  // --- baseline ---------------------------------------------------------------
  std::string b_dataset, b_out = ".", b_embeddings, b_endpoint, b_model, b_transcripts, b_replay;
  std::string b_key_env = "TOKATTR_LLM_API_KEY";
  std::size_t b_jobs = 1, b_in_flight = 4;
  int b_timeout_ms = 60000, b_retries = 3;
  double b_k1 = 1.2, b_b = 0.75;
  auto* base_cmd = app.add_subcommand("baseline", "Retrieval and prompting baselines");
  base_cmd->require_subcommand(1, 1);
  auto add_base_common = [&](CLI::App* sub) {
    sub->add_option("--dataset", b_dataset, "Annotated samples (JSONL)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", b_out, "Output directory");
  };
  auto add_llm = [&](CLI::App* sub) {
    sub->add_option("--endpoint", b_endpoint, "Chat-completion URL");
    sub->add_option("--model", b_model, "Model name sent to the endpoint")->required();
    sub->add_option("--transcripts", b_transcripts, "Directory for request/response transcripts");
    sub->add_option("--replay", b_replay, "Answer from recorded transcripts instead of the network")
        ->check(CLI::ExistingDirectory);
    sub->add_option("--jobs", b_jobs, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--max-in-flight", b_in_flight, "Concurrent requests")->check(CLI::PositiveNumber);
    sub->add_option("--timeout-ms", b_timeout_ms, "Per-request timeout")->check(CLI::PositiveNumber);
    sub->add_option("--retries", b_retries, "Retries on transport errors, 429 and 5xx")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--api-key-env", b_key_env, "Environment variable holding the bearer token");
  };
  auto* bm25_cmd = base_cmd->add_subcommand("bm25", "Rank passages by BM25 against each gold span");
  add_base_common(bm25_cmd);
  bm25_cmd->add_option("--k1", b_k1, "BM25 k1");
  bm25_cmd->add_option("--b", b_b, "BM25 b");
  auto* dense_cmd = base_cmd->add_subcommand("dense", "Rank passages by precomputed embeddings");
  add_base_common(dense_cmd);
  dense_cmd->add_option("--embeddings", b_embeddings, "Embeddings (JSONL)")->required()->check(CLI::ExistingFile);
  auto* llm_spans_cmd = base_cmd->add_subcommand("llm-spans", "Ask an LLM to mark copied spans");
  add_base_common(llm_spans_cmd);
  add_llm(llm_spans_cmd);
  auto* llm_attr_cmd = base_cmd->add_subcommand("llm-attr", "Ask an LLM which passage a span came from");
  add_base_common(llm_attr_cmd);
  add_llm(llm_attr_cmd);

  auto write_paragraph = [&](const std::string& name, const std::vector<ParagraphPrediction>& p) {
    ensure_dir(b_out);
    write_text_file(fs::path(b_out) / "predictions.jsonl", paragraph_predictions_jsonl(p));
    write_text_file(fs::path(b_out) / "report.json", paragraph_baseline_report_json(name, p));
    for (const auto& x : p) {
      if (!x.error.empty()) std::cerr << "skipped " << x.sample_id << " span " << x.span_index << ": " << x.error << "\n";
    }
    log_path = fs::path(b_out) / "run.log";
  };
  bm25_cmd->callback([&] {
    action = [&] { write_paragraph("bm25", run_bm25_baseline(read_samples(b_dataset), {b_k1, b_b})); };
  });
  dense_cmd->callback([&] {
    action = [&] {
      write_paragraph("dense", run_dense_baseline(read_samples(b_dataset), read_embeddings(b_embeddings)));
    };
  });
  llm_attr_cmd->callback([&] {
    action = [&] {
      const auto samples = read_samples(b_dataset);
      auto client = make_chat_client(b_endpoint, b_model, b_replay, b_transcripts, b_timeout_ms, b_retries,
                                     b_in_flight, b_key_env);
      write_paragraph("llm-attr", run_llm_attr_baseline(samples, *client, b_jobs));
    };
  });
  llm_spans_cmd->callback([&] {
    action = [&] {
      const auto samples = read_samples(b_dataset);
      auto client = make_chat_client(b_endpoint, b_model, b_replay, b_transcripts, b_timeout_ms, b_retries,
                                     b_in_flight, b_key_env);
      const auto p = run_llm_spans_baseline(samples, *client, b_jobs);
      ensure_dir(b_out);
      write_text_file(fs::path(b_out) / "predictions.jsonl", span_predictions_jsonl(p));
      write_text_file(fs::path(b_out) / "report.json", span_baseline_report_json("llm-spans", p));
      for (const auto& x : p) {
        if (!x.error.empty()) std::cerr << "skipped " << x.sample_id << ": " << x.error << "\n";
      }
      log_path = fs::path(b_out) / "run.log";
    };
  });

  // --- serve ------------------------------------------------------------------
  std::string v_host = "127.0.0.1", v_data, v_cmd, v_url, v_model, v_template = "inst-v1", v_cors = "*";
  int v_port = 8080;
  bool v_no_import = false;
  auto* serve_cmd = app.add_subcommand("serve", "Run the JSON API");
  serve_cmd->add_option("--host", v_host, "Bind address");
  serve_cmd->add_option("--port", v_port, "Port")->check(CLI::Range(1, 65535));
  serve_cmd->add_option("--data-dir", v_data, "Session storage")->required();
  auto* cmd_opt = serve_cmd->add_option("--extractor-cmd", v_cmd, "Extractor command line");
  auto* url_opt = serve_cmd->add_option("--extractor-url", v_url, "Extractor HTTP base URL");
  cmd_opt->excludes(url_opt);
  serve_cmd->add_option("--model", v_model, "Model name passed to the extractor");
  serve_cmd->add_option("--template", v_template, "Prompt template id");
  serve_cmd->add_option("--cors-origin", v_cors, "Access-Control-Allow-Origin value");
  serve_cmd->add_flag("--no-trace-import", v_no_import, "Refuse trace_dir session imports");
  serve_cmd->callback([&] {
    if ((!v_cmd.empty() || !v_url.empty()) && v_model.empty()) {
      throw CLI::ValidationError("--model", "required with an extractor");
    }
    action = [&] {
      ServiceConfig cfg;
      cfg.data_dir = v_data;
      if (!v_cmd.empty()) cfg.extractor = std::make_shared<CommandExtractor>(split_command(v_cmd));
      if (!v_url.empty()) cfg.extractor = std::make_shared<HttpExtractor>(v_url);
      cfg.model = v_model;
      cfg.template_id = v_template;
      cfg.cors_origin = v_cors;
      cfg.allow_trace_import = !v_no_import;
      run_service(cfg, v_host, v_port);
    };
  });

  // --- extract ----------------------------------------------------------------
  std::string x_model, x_doc, x_question, x_answer, x_template = "inst-v1", x_out, x_cmd;
  bool x_generate = false;
  auto* extract_cmd = app.add_subcommand("extract", "Run the external trace extractor");
  extract_cmd->add_option("--model", x_model, "Model name")->required();
  extract_cmd->add_option("--doc", x_doc, "Document text file")->required()->check(CLI::ExistingFile);
  extract_cmd->add_option("--question", x_question, "Question text file")->required()->check(CLI::ExistingFile);
  auto* ans_opt = extract_cmd->add_option("--answer", x_answer, "Answer text file")->check(CLI::ExistingFile);
  auto* gen_opt = extract_cmd->add_flag("--generate", x_generate, "Let the model generate the answer");
  ans_opt->excludes(gen_opt);
  extract_cmd->add_option("--template", x_template, "Prompt template id");
  extract_cmd->add_option("--out", x_out, "Trace output directory")->required();
  extract_cmd->add_option("--extractor-cmd", x_cmd,
                          "Extractor command line (default: $TOKATTR_EXTRACTOR or tokattr-extract)");
  extract_cmd->callback([&] {
    if (x_answer.empty() && !x_generate) throw CLI::RequiredError("--answer or --generate");
    action = [&] {
      std::string cmdline = x_cmd;
      if (cmdline.empty()) {
        const char* env = std::getenv("TOKATTR_EXTRACTOR");
        cmdline = env && *env ? env : "tokattr-extract";
      }
      auto argvx = split_command(cmdline);
      if (argvx.empty()) throw InputError("empty extractor command");
      for (const auto& a : std::vector<std::string>{"--model", x_model, "--doc", x_doc, "--question", x_question}) {
        argvx.push_back(a);
      }
      if (x_generate) {
        argvx.push_back("--generate");
      } else {
        argvx.push_back("--answer");
        argvx.push_back(x_answer);
      }
      for (const auto& a : std::vector<std::string>{"--template", x_template, "--out", x_out}) argvx.push_back(a);
      const auto r = run_command(argvx);
      std::cerr << r.output;
      if (r.exit_code == 1) throw InputError("extractor rejected its input (exit 1)");
      if (r.exit_code != 0) throw EngineError("extractor failed with exit code " + std::to_string(r.exit_code));
      const auto trace = read_trace(x_out);
      if (const auto v = validate_trace(trace); !v.empty()) {
        throw EngineError("extractor wrote an invalid trace: " + v.front().message);
      }
      log_path = x_out + ".log";
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  int code = 0;
  try {
    action();
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = 2;
  }
  if (!log_path.empty()) append_run_log(log_path, args, code == 0 ? "ok" : "exit " + std::to_string(code));
  return code;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
