#include "tokattr/service.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <random>
#include <shared_mutex>

#include <httplib.h>
#include <json.hpp>

#include "tokattr/answer_map.hpp"
#include "tokattr/attribution.hpp"
#include "tokattr/detection.hpp"
#include "tokattr/error.hpp"
#include "tokattr/evaluation.hpp"
#include "tokattr/text.hpp"

namespace tokattr {
namespace {

using nlohmann::json;

struct HttpError : std::runtime_error {
  HttpError(int s, const std::string& m) : std::runtime_error(m), status(s) {}
  int status;
};

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

bool valid_id(const std::string& id) {
  if (id.size() != 16) return false;
  for (char c : id) {
    if (!std::isxdigit(static_cast<unsigned char>(c)) || std::isupper(static_cast<unsigned char>(c))) {
      return false;
    }
  }
  return true;
}

json parse_body(const std::string& body) {
  auto j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw HttpError(422, "request body must be a JSON object");
  return j;
}

std::size_t get_index(const json& j, const char* key, bool required, std::size_t fallback = 0) {
  if (!j.contains(key) || j[key].is_null()) {
    if (required) throw HttpError(422, std::string("'") + key + "' is required");
    return fallback;
  }
  if (!j[key].is_number_integer() || j[key].get<std::int64_t>() < 0) {
    throw HttpError(422, std::string("'") + key + "' must be a non-negative integer");
  }
  return j[key].get<std::size_t>();
}

std::optional<std::string> get_string(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  if (!j[key].is_string()) throw HttpError(422, std::string("'") + key + "' must be a string");
  return j[key].get<std::string>();
}

ApiResponse error_response(int status, const std::string& message) {
  json j{{"schema_version", kApiSchemaVersion}, {"engine_version", kEngineVersion}, {"error", message}};
  return {status, j.dump()};
}

struct Session {
  std::string id;
  std::string document;
  std::string question;
  std::string answer;
  std::string status;  // extracting | ready | failed
  std::string error;
  std::string created_at;
  std::string model_name;
  bool generate = false;

  mutable std::mutex load_mutex;
  std::shared_ptr<const Trace> trace;
  AnswerTokenMap answer_map;
  std::size_t document_base = 0;

  json to_json() const {
    std::lock_guard lock(load_mutex);
    json j{{"schema_version", kApiSchemaVersion},
           {"engine_version", kEngineVersion},
           {"session_id", id},
           {"status", status},
           {"document", document},
           {"question", question},
           {"answer", answer},
           {"created_at", created_at},
           {"generate", generate}};
    j["model_name"] = model_name.empty() ? json(nullptr) : json(model_name);
    j["error"] = error.empty() ? json(nullptr) : json(error);
    return j;
  }
};

std::size_t locate_document(const Trace& trace, const std::string& document) {
  const auto& tokens = trace.manifest.tokens;
  const auto idx = segment_indices(trace, Segment::kDocument);
  if (idx.empty()) throw EngineError("trace has no document tokens");
  std::string joined;
  for (auto i : idx) joined += tokens[i].text;
  if (const auto pos = joined.find(document); pos != std::string::npos && !document.empty()) {
    return tokens[idx.front()].char_start + pos;
  }
  if (trace.manifest.prompt && !document.empty()) {
    if (const auto pos = trace.manifest.prompt->find(document); pos != std::string::npos) return pos;
  }
  return tokens[idx.front()].char_start;
}

}  // namespace

struct Service::Impl {
  ServiceConfig config;
  std::shared_mutex mutex;
  std::map<std::string, std::shared_ptr<Session>> sessions;
  std::mutex rng_mutex;
  std::mt19937_64 rng{std::random_device{}()};

  std::filesystem::path session_dir(const std::string& id) const {
    return config.data_dir / "sessions" / id;
  }

  void persist(const Session& s) {
    write_text_file(session_dir(s.id) / "session.json", s.to_json().dump(2) + "\n");
  }

  std::string new_id() {
    std::lock_guard lock(rng_mutex);
    static constexpr char hex[] = "0123456789abcdef";
    while (true) {
      std::string id;
      auto x = rng();
      for (int i = 0; i < 16; ++i, x >>= 4) id += hex[x & 0xF];
      if (!std::filesystem::exists(session_dir(id))) return id;
    }
  }

  void load_existing() {
    const auto root = config.data_dir / "sessions";
    if (!std::filesystem::is_directory(root)) return;
    for (const auto& entry : std::filesystem::directory_iterator(root)) {
      const auto file = entry.path() / "session.json";
      std::ifstream in(file);
      if (!in) continue;
      const auto j = json::parse(in, nullptr, false);
      if (j.is_discarded() || !j.contains("session_id")) continue;
      auto s = std::make_shared<Session>();
      s->id = j.value("session_id", "");
      if (!valid_id(s->id)) continue;
      s->document = j.value("document", "");
      s->question = j.value("question", "");
      s->answer = j.value("answer", "");
      s->status = j.value("status", "failed");
      s->created_at = j.value("created_at", "");
      s->generate = j.value("generate", false);
      if (j.contains("model_name") && j["model_name"].is_string()) s->model_name = j["model_name"];
      if (j.contains("error") && j["error"].is_string()) s->error = j["error"];
      if (s->status == "extracting") {
        s->status = "failed";
        s->error = "extraction interrupted by a service restart";
        persist(*s);
      }
      sessions[s->id] = s;
    }
  }

  std::shared_ptr<Session> find(const std::string& id) {
    if (!valid_id(id)) throw HttpError(404, "unknown session '" + id + "'");
    std::shared_lock lock(mutex);
    const auto it = sessions.find(id);
    if (it == sessions.end()) throw HttpError(404, "unknown session '" + id + "'");
    return it->second;
  }

  // Loads the trace of a ready session once; later calls share it.
  std::shared_ptr<const Trace> ready_trace(Session& s) {
    std::lock_guard lock(s.load_mutex);
    if (s.status != "ready") throw HttpError(409, "session is " + s.status);
    if (!s.trace) {
      auto trace = std::make_shared<Trace>(read_trace(session_dir(s.id) / "trace"));
      s.answer_map = map_answer(*trace, s.answer);
      s.document_base = locate_document(*trace, s.document);
      s.trace = std::move(trace);
    }
    return s.trace;
  }

  static void check_layer(const Trace& trace, std::size_t layer) {
    if (layer >= trace.manifest.layer_count) {
      throw HttpError(400, "invalid layer " + std::to_string(layer) + ": trace has " +
                               std::to_string(trace.manifest.layer_count) + " layers");
    }
  }

  json provenance(const Session& s) const {
    return {{"schema_version", kApiSchemaVersion},
            {"engine_version", kEngineVersion},
            {"model_name", s.model_name},
            {"session_id", s.id}};
  }
};

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>()) {
  impl_->config = std::move(config);
  if (impl_->config.data_dir.empty()) throw InputError("service data directory is required");
  std::filesystem::create_directories(impl_->config.data_dir / "sessions");
  impl_->load_existing();
}

Service::~Service() = default;

namespace {

template <class Fn>
ApiResponse guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const HttpError& e) {
    return error_response(e.status, e.what());
  } catch (const InputError& e) {
    return error_response(422, e.what());
  } catch (const json::exception& e) {
    return error_response(422, e.what());
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

}  // namespace

ApiResponse Service::create_session(const std::string& body) {
  return guarded([&]() -> ApiResponse {
    auto& impl = *impl_;
    const auto req = parse_body(body);
    auto s = std::make_shared<Session>();
    s->id = impl.new_id();
    s->created_at = now_utc();
    const auto dir = impl.session_dir(s->id);
    const auto trace_dir = get_string(req, "trace_dir");

    if (trace_dir) {
      if (!impl.config.allow_trace_import) throw HttpError(422, "trace import is disabled");
      const Trace trace = read_trace(*trace_dir);
      s->document = get_string(req, "document").value_or(segment_text(trace, Segment::kDocument));
      s->question = get_string(req, "question").value_or(segment_text(trace, Segment::kQuestion));
      s->answer = get_string(req, "answer").value_or(segment_text(trace, Segment::kAnswer));
      if (s->document.empty()) throw HttpError(422, "document must be non-empty");
      map_answer(trace, s->answer);
      s->model_name = trace.manifest.model_name;
      write_trace(trace, dir / "trace");
      s->status = "ready";
      impl.persist(*s);
    } else {
      const auto document = get_string(req, "document");
      if (!document || document->empty()) throw HttpError(422, "document must be a non-empty string");
      const auto question = get_string(req, "question");
      if (!question) throw HttpError(422, "question must be a string");
      if (req.contains("generate") && !req["generate"].is_boolean()) {
        throw HttpError(422, "'generate' must be a boolean");
      }
      s->generate = req.value("generate", false);
      const auto answer = get_string(req, "answer");
      if (!s->generate && !answer) throw HttpError(422, "answer is required unless generate is true");
      if (!impl.config.extractor) throw HttpError(422, "no extractor configured");
      s->document = *document;
      s->question = *question;
      s->answer = answer.value_or("");
      s->status = "extracting";
      impl.persist(*s);
      {
        std::unique_lock lock(impl.mutex);
        impl.sessions[s->id] = s;
      }
      ExtractionRequest er{impl.config.model, s->document,  s->question,
                           s->generate ? std::nullopt : answer,        s->generate,
                           impl.config.template_id, dir / "trace"};
      try {
        const auto outcome = impl.config.extractor->extract(er);
        const Trace trace = read_trace(dir / "trace");
        map_answer(trace, outcome.answer);
        std::lock_guard lock(s->load_mutex);
        s->answer = outcome.answer;
        s->model_name = trace.manifest.model_name;
        s->status = "ready";
      } catch (const std::exception& e) {
        std::lock_guard lock(s->load_mutex);
        s->status = "failed";
        s->error = e.what();
      }
      impl.persist(*s);
      if (s->status == "failed") {
        auto j = s->to_json();
        return {502, j.dump()};
      }
    }
    {
      std::unique_lock lock(impl.mutex);
      impl.sessions[s->id] = s;
    }
    return {201, s->to_json().dump()};
  });
}

ApiResponse Service::get_session(const std::string& id) {
  return guarded([&]() -> ApiResponse { return {200, impl_->find(id)->to_json().dump()}; });
}

ApiResponse Service::detect(const std::string& id, const std::string& body) {
  return guarded([&]() -> ApiResponse {
    auto s = impl_->find(id);
    const auto req = parse_body(body);
    const auto layer = get_index(req, "layer", true);
    if (!req.contains("theta") || !req["theta"].is_number()) {
      throw HttpError(422, "'theta' must be a number");
    }
    const double theta = req["theta"].get<double>();
    const bool filter = req.value("filter", true);
    const auto trace = impl_->ready_trace(*s);
    Impl::check_layer(*trace, layer);

    const auto result = tokattr::detect(*trace, {layer, theta}, StopList::english_v1(), filter);
    const auto& map = s->answer_map;
    json spans = json::array();
    for (const auto& sp : result.spans) {
      std::size_t cs = map.ranges[sp.start].start;
      const std::size_t ce = map.ranges[sp.end - 1].end;
      while (cs < ce && text::is_space(static_cast<unsigned char>(s->answer[cs]))) ++cs;
      double mean = 0.0;
      for (auto i = sp.start; i < sp.end; ++i) mean += result.scores[i];
      mean /= static_cast<double>(sp.end - sp.start);
      spans.push_back({{"token_start", sp.start},
                       {"token_end", sp.end},
                       {"answer_char_start", cs},
                       {"answer_char_end", ce},
                       {"text", s->answer.substr(cs, ce - cs)},
                       {"mean_score", mean}});
    }
    json tokens = json::array();
    for (std::size_t i = 0; i < map.ranges.size(); ++i) {
      tokens.push_back({{"answer_char_start", map.ranges[i].start},
                        {"answer_char_end", map.ranges[i].end},
                        {"score", result.scores[i]}});
    }
    auto j = impl_->provenance(*s);
    j["layer"] = layer;
    j["theta"] = theta;
    j["spans"] = spans;
    j["tokens"] = tokens;
    return {200, j.dump()};
  });
}

ApiResponse Service::attribute(const std::string& id, const std::string& body) {
  return guarded([&]() -> ApiResponse {
    auto s = impl_->find(id);
    const auto req = parse_body(body);
    const auto layer = get_index(req, "layer", true);
    const auto trace = impl_->ready_trace(*s);
    Impl::check_layer(*trace, layer);

    SpanRef span;
    if (req.contains("span")) {
      const auto& sp = req["span"];
      if (!sp.is_object()) throw HttpError(422, "'span' must be an object");
      const auto cs = get_index(sp, "char_start", true);
      const auto ce = get_index(sp, "char_end", true);
      const auto resolved =
          span_for_chars(s->answer_map, s->answer, cs, ce, OverlapRule::kNonWhitespace);
      if (!resolved) throw HttpError(422, "span resolves to zero answer tokens");
      span = *resolved;
    } else if (req.contains("token_span")) {
      const auto& sp = req["token_span"];
      if (!sp.is_object()) throw HttpError(422, "'token_span' must be an object");
      span = {get_index(sp, "start", true), get_index(sp, "end", true)};
    } else {
      throw HttpError(422, "'span' or 'token_span' is required");
    }

    AttributionConfig cfg;
    cfg.layer = layer;
    cfg.anchor_count = get_index(req, "K", false, kDefaultAnchorCount);
    if (req.contains("L") && !req["L"].is_null()) cfg.max_window_len = get_index(req, "L", true);
    if (const auto b = get_string(req, "boundary")) {
      if (*b == "respect_evidence") cfg.boundary_policy = BoundaryPolicy::kRespectEvidence;
      else if (*b == "ignore_evidence") cfg.boundary_policy = BoundaryPolicy::kIgnoreEvidence;
      else throw HttpError(422, "'boundary' must be respect_evidence or ignore_evidence");
    }
    const auto segmentation = EvidenceSegmentation::from_trace(*trace);
    const auto r = attribute_span(*trace, span, cfg, segmentation);

    const auto [pcs, pce] = document_char_range(*trace, r.window);
    const std::size_t base = s->document_base;
    const auto rel = [&](std::size_t x) {
      return std::min(x > base ? x - base : 0, s->document.size());
    };
    std::size_t dcs = rel(pcs);
    const std::size_t dce = rel(pce);
    while (dcs < dce && text::is_space(static_cast<unsigned char>(s->document[dcs]))) ++dcs;

    auto j = impl_->provenance(*s);
    j["layer"] = layer;
    j["span"] = {{"token_start", span.start},
                 {"token_end", span.end},
                 {"answer_char_start", s->answer_map.ranges[span.start].start},
                 {"answer_char_end", s->answer_map.ranges[span.end - 1].end}};
    j["window"] = {{"token_start", r.window.start},
                   {"token_end", r.window.end},
                   {"prompt_char_start", pcs},
                   {"prompt_char_end", pce},
                   {"document_char_start", dcs},
                   {"document_char_end", dce},
                   {"text", s->document.substr(dcs, dce - dcs)}};
    j["score"] = r.score;
    j["degenerate"] = r.degenerate;
    j["evidence_scores"] = json::array();
    for (const auto& e : r.evidence_scores) j["evidence_scores"].push_back(e ? json(*e) : json(nullptr));
    j["predicted_evidence"] = r.predicted_evidence ? json(*r.predicted_evidence) : json(nullptr);
    j["anchors"] = json::array();
    for (const auto& a : r.anchors) {
      j["anchors"].push_back({{"doc_index", a.doc_index}, {"similarity", a.similarity}});
    }
    return {200, j.dump()};
  });
}

ApiResponse Service::health() const {
  return {200, json{{"status", "ok"}, {"engine_version", kEngineVersion},
                    {"schema_version", kApiSchemaVersion}}
                   .dump()};
}

void Service::mount(httplib::Server& server) {
  const std::string origin = impl_->config.cors_origin;
  auto reply = [](httplib::Response& res, const ApiResponse& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  server.set_post_routing_handler([origin](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", origin);
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
  });
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const auto r = error_response(res.status, res.status == 404 ? "not found" : "request failed");
    res.set_content(r.body, "application/json");
  });
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server.Get("/health", [this, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, health());
  });
  server.Post("/api/sessions", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, create_session(req.body));
  });
  server.Get(R"(/api/sessions/([^/]+))", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, get_session(req.matches[1]));
  });
  server.Post(R"(/api/sessions/([^/]+)/detect)",
              [this, reply](const httplib::Request& req, httplib::Response& res) {
                reply(res, detect(req.matches[1], req.body));
              });
  server.Post(R"(/api/sessions/([^/]+)/attribute)",
              [this, reply](const httplib::Request& req, httplib::Response& res) {
                reply(res, attribute(req.matches[1], req.body));
              });
}

void run_service(ServiceConfig config, const std::string& host, int port) {
  Service service(std::move(config));
  httplib::Server server;
  service.mount(server);
  server.set_logger([](const httplib::Request& req, const httplib::Response& res) {
    std::cerr << req.method << " " << req.path << " " << res.status << "\n";
  });
  std::cerr << "tokattr service listening on " << host << ":" << port << "\n";
  if (!server.listen(host, port)) {
    throw EngineError("cannot listen on " + host + ":" + std::to_string(port));
  }
}

}  // namespace tokattr
