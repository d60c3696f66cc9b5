#include <doctest.h>

#include <fstream>
#include <random>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "synthetic.hpp"
#include "tempdir.hpp"
#include "tokattr/error.hpp"
#include "tokattr/extractor.hpp"
#include "tokattr/service.hpp"

using namespace tokattr;
using nlohmann::json;
using tokattr::testing::CopyFixture;
using tokattr::testing::TempDir;

namespace {

CopyFixture fixture(unsigned seed = 101) {
  std::mt19937_64 rng(seed);
  return tokattr::testing::make_copy_fixture(rng, {}, "fx");
}

// Serves a Service on an ephemeral port for the lifetime of the object.
struct Running {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  Service service;

  explicit Running(ServiceConfig cfg) : service(std::move(cfg)) {
    service.mount(server);
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~Running() {
    server.stop();
    thread.join();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port); }
};

json post(httplib::Client& c, const std::string& path, const json& body, int expect) {
  auto res = c.Post(path, body.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == expect);
  return json::parse(res->body);
}

}  // namespace

TEST_CASE("service over HTTP with an imported fixture trace") {
  TempDir dir;
  const auto f = fixture();
  write_trace(f.trace, dir / "fixture-trace");
  Running run({dir / "data", nullptr, "", "inst-v1", "*", true});
  auto c = run.client();

  const auto health = c.Get("/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(json::parse(health->body)["engine_version"] == kEngineVersion);
  CHECK(health->get_header_value("Access-Control-Allow-Origin") == "*");

  auto created = post(c, "/api/sessions", {{"trace_dir", (dir / "fixture-trace").string()}}, 201);
  CHECK(created["status"] == "ready");
  CHECK(created["answer"] == f.sample.answer);
  CHECK(created["model_name"] == "onehot-synthetic");
  const std::string id = created["session_id"];
  const std::string base = "/api/sessions/" + id;

  auto got = c.Get(base.c_str());
  REQUIRE(got);
  CHECK(got->status == 200);
  CHECK(json::parse(got->body)["session_id"] == id);

  SUBCASE("detection extremes and determinism") {
    const auto all = post(c, base + "/detect", {{"layer", 1}, {"theta", -1.0}}, 200);
    REQUIRE(all["spans"].size() == 1);
    CHECK(all["spans"][0]["answer_char_start"] == 0);
    CHECK(all["spans"][0]["answer_char_end"] == f.sample.answer.size());
    CHECK(all["model_name"] == "onehot-synthetic");
    CHECK(all["engine_version"] == kEngineVersion);

    const auto none = post(c, base + "/detect", {{"layer", 1}, {"theta", 1.0}}, 200);
    CHECK(none["spans"].empty());

    const auto half = post(c, base + "/detect", {{"layer", 1}, {"theta", 0.5}}, 200);
    REQUIRE(half["spans"].size() == f.sample.gold_spans.size());
    for (std::size_t k = 0; k < f.sample.gold_spans.size(); ++k) {
      CHECK(half["spans"][k]["answer_char_start"] == f.sample.gold_spans[k].answer_char_start);
      CHECK(half["spans"][k]["answer_char_end"] == f.sample.gold_spans[k].answer_char_end);
      CHECK(half["spans"][k]["mean_score"].get<double>() == doctest::Approx(1.0));
    }
    const auto again = post(c, base + "/detect", {{"layer", 1}, {"theta", 0.5}}, 200);
    CHECK(again == half);
  }

  SUBCASE("clicking a copied span highlights its source occurrence") {
    const auto document = created["document"].get<std::string>();
    for (std::size_t k = 0; k < f.sample.gold_spans.size(); ++k) {
      const auto& g = f.sample.gold_spans[k];
      const auto r = post(c, base + "/attribute",
                          {{"layer", 1}, {"span", {{"char_start", g.answer_char_start},
                                                   {"char_end", g.answer_char_end}}}},
                          200);
      CHECK(r["score"].get<double>() == doctest::Approx(1.0).epsilon(1e-6));
      const std::size_t ds = r["window"]["document_char_start"];
      const std::size_t de = r["window"]["document_char_end"];
      CHECK(document.substr(ds, de - ds) == std::string(f.sample.span_text(g)));
      CHECK(r["window"]["text"] == std::string(f.sample.span_text(g)));
      CHECK(r["predicted_evidence"] == g.passage_index);
      CHECK(r["evidence_scores"].size() == f.sample.passages.size());
    }
  }

  SUBCASE("concurrent identical attribute requests agree") {
    const auto& g = f.sample.gold_spans[0];
    const json body{{"layer", 0}, {"K", 3}, {"L", 6},
                    {"span", {{"char_start", g.answer_char_start}, {"char_end", g.answer_char_end}}}};
    std::string a, b;
    std::thread t1([&] { auto cl = run.client(); a = cl.Post(base + "/attribute", body.dump(), "application/json")->body; });
    std::thread t2([&] { auto cl = run.client(); b = cl.Post(base + "/attribute", body.dump(), "application/json")->body; });
    t1.join();
    t2.join();
    CHECK(a == b);
    CHECK_FALSE(a.empty());
  }

  SUBCASE("error statuses") {
    const auto space = f.sample.answer.find(' ');
    post(c, base + "/attribute",
         {{"layer", 1}, {"span", {{"char_start", space}, {"char_end", space + 1}}}}, 422);
    post(c, base + "/detect", {{"layer", 99}, {"theta", 0.5}}, 400);
    post(c, base + "/detect", {{"layer", 0}}, 422);
    post(c, "/api/sessions/0123456789abcdef/detect", {{"layer", 0}, {"theta", 0.5}}, 404);
    post(c, "/api/sessions/../../etc/detect", {{"layer", 0}, {"theta", 0.5}}, 404);
    post(c, "/api/sessions", {{"document", ""}, {"question", "q"}, {"answer", "a"}}, 422);
    post(c, "/api/sessions", {{"document", "d"}, {"question", "q"}, {"generate", true}}, 422);
    auto bad = c.Post("/api/sessions", "not json", "application/json");
    REQUIRE(bad);
    CHECK(bad->status == 422);
    auto missing = c.Get("/api/sessions/ffffffffffffffff");
    REQUIRE(missing);
    CHECK(missing->status == 404);
  }

  SUBCASE("preflight") {
    auto res = c.Options("/api/sessions");
    REQUIRE(res);
    CHECK(res->status == 204);
    CHECK(res->get_header_value("Access-Control-Allow-Methods").find("POST") != std::string::npos);
  }

  SUBCASE("sessions survive a restart") {
    Service restarted({dir / "data", nullptr, "", "inst-v1", "*", true});
    const auto r = restarted.detect(id, R"({"layer":1,"theta":0.5})");
    CHECK(r.status == 200);
    CHECK(json::parse(r.body)["spans"].size() == f.sample.gold_spans.size());
  }
}

TEST_CASE("service sessions through an extractor") {
  TempDir dir;
  const auto f = fixture(103);
  std::vector<ExtractionRequest> seen;
  auto extractor = std::make_shared<FunctionExtractor>([&](const ExtractionRequest& r) {
    seen.push_back(r);
    if (r.document == "explode") throw EngineError("context length 2048 exceeded: prompt has 3000 tokens");
    write_trace(f.trace, r.out_dir);
    return ExtractionOutcome{f.sample.answer};
  });
  Service svc({dir / "data", extractor, "toy-model", "inst-v1", "*", true});

  SUBCASE("generate") {
    const auto r = svc.create_session(json{{"document", "doc"}, {"question", "q"}, {"generate", true}}.dump());
    CHECK(r.status == 201);
    const auto j = json::parse(r.body);
    CHECK(j["status"] == "ready");
    CHECK(j["answer"] == f.sample.answer);
    REQUIRE(seen.size() == 1);
    CHECK(seen[0].generate);
    CHECK_FALSE(seen[0].answer);
    CHECK(seen[0].model == "toy-model");
  }
  SUBCASE("force decoding a given answer") {
    const auto r = svc.create_session(
        json{{"document", "doc"}, {"question", "q"}, {"answer", f.sample.answer}}.dump());
    CHECK(r.status == 201);
    REQUIRE(seen.size() == 1);
    CHECK(*seen[0].answer == f.sample.answer);
  }
  SUBCASE("extractor failure is surfaced verbatim") {
    const auto r = svc.create_session(json{{"document", "explode"}, {"question", "q"}, {"generate", true}}.dump());
    CHECK(r.status == 502);
    const auto j = json::parse(r.body);
    CHECK(j["status"] == "failed");
    CHECK(j["error"] == "context length 2048 exceeded: prompt has 3000 tokens");
    const auto d = svc.detect(j["session_id"], R"({"layer":0,"theta":0.5})");
    CHECK(d.status == 409);
  }
}

TEST_CASE("command extractor") {
  TempDir dir;
  const auto f = fixture(107);
  write_trace(f.trace, dir / "prepared");
  const auto script = dir / "fake-extract.sh";
  {
    std::ofstream out(script);
    out << "#!/bin/sh\n"
           "out=''\nanswer=''\ngen=0\n"
           "while [ $# -gt 0 ]; do\n"
           "  case \"$1\" in\n"
           "    --out) out=\"$2\"; shift 2;;\n"
           "    --answer) answer=\"$2\"; shift 2;;\n"
           "    --generate) gen=1; shift;;\n"
           "    --doc) grep -q fail \"$2\" && { echo 'model load failed: no weights' >&2; exit 3; }; shift 2;;\n"
           "    *) shift 2;;\n"
           "  esac\n"
           "done\n"
           "[ -n \"$answer\" ] && [ ! -f \"$answer\" ] && exit 4\n"
           "cp -r '"
        << (dir / "prepared").string() << "' \"$out\"\n";
  }
  std::filesystem::permissions(script, std::filesystem::perms::owner_all);

  CommandExtractor ex({"/bin/sh", script.string()});
  ExtractionRequest req{"m", "a document", "q?", f.sample.answer, false, "inst-v1", dir / "s1" / "trace"};
  std::filesystem::create_directories(dir / "s1");
  CHECK(ex.extract(req).answer == f.sample.answer);
  CHECK(read_trace(dir / "s1" / "trace") == f.trace);

  req.generate = true;
  req.answer.reset();
  req.out_dir = dir / "s2" / "trace";
  std::filesystem::create_directories(dir / "s2");
  CHECK(ex.extract(req).answer == segment_text(f.trace, Segment::kAnswer));

  req.document = "please fail";
  req.out_dir = dir / "s3" / "trace";
  std::filesystem::create_directories(dir / "s3");
  CHECK_THROWS_WITH_AS(ex.extract(req), doctest::Contains("model load failed: no weights"), EngineError);

  CHECK_THROWS_AS(run_command({"/definitely/not/a/program"}), EngineError);
  CHECK(split_command("python -m 'my extractor' \"a b\"") ==
        std::vector<std::string>{"python", "-m", "my extractor", "a b"});
}

TEST_CASE("http extractor") {
  TempDir dir;
  const auto f = fixture(109);
  httplib::Server server;
  json last;
  server.Post("/extract", [&](const httplib::Request& req, httplib::Response& res) {
    last = json::parse(req.body);
    write_trace(f.trace, last["out"].get<std::string>());
    res.set_content(json{{"answer", f.sample.answer}}.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  HttpExtractor ex("http://127.0.0.1:" + std::to_string(port) + "/");
  ExtractionRequest req{"m", "d", "q", std::nullopt, true, "inst-v1", dir / "trace"};
  CHECK(ex.extract(req).answer == f.sample.answer);
  CHECK(last["generate"] == true);
  CHECK(last["answer"].is_null());
  CHECK(last["template"] == "inst-v1");

  server.stop();
  t.join();
  CHECK_THROWS_WITH_AS(ex.extract(req), doctest::Contains("unreachable"), EngineError);
}
