#include "tokattr/llm.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <semaphore>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>
#include <openssl/sha.h>

#include "tokattr/error.hpp"

namespace tokattr {
namespace {

using nlohmann::json;

bool retryable(int status) { return status == 429 || status >= 500; }

void write_transcript(const std::filesystem::path& dir, const std::string& request_body,
                      const std::string& response_body, int status, int attempts) {
  std::filesystem::create_directories(dir);
  json record;
  record["request"] = json::parse(request_body);
  record["status"] = status;
  record["attempts"] = attempts;
  record["response"] = response_body;
  try {
    record["completion"] = completion_from_response(response_body);
  } catch (const EngineError&) {
    record["completion"] = nullptr;
  }
  const auto path = dir / (request_key(request_body) + ".json");
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << record.dump(2) << "\n";
    if (!out) throw EngineError("cannot write transcript " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void validate_llm_config(const LlmClientConfig& config) {
  if (config.endpoint.empty()) throw InputError("LLM endpoint is required");
  if (config.model.empty()) throw InputError("LLM model name is required");
  if (config.timeout.count() <= 0) throw InputError("LLM request timeout must be > 0");
  if (config.retries < 0) throw InputError("LLM retry budget must be >= 0");
  if (config.max_in_flight < 1) throw InputError("LLM in-flight limit must be >= 1");
  parse_endpoint(config.endpoint);
}

std::string chat_request_body(const std::string& model, const std::vector<ChatMessage>& messages) {
  json body;
  body["model"] = model;
  body["temperature"] = 0;
  body["messages"] = json::array();
  for (const auto& m : messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});
  return body.dump();
}

std::string completion_from_response(const std::string& response_body) {
  const auto j = json::parse(response_body, nullptr, false);
  if (j.is_discarded()) throw EngineError("chat response is not JSON");
  const json* content = nullptr;
  if (j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
    const auto& choice = j["choices"][0];
    if (choice.contains("message") && choice["message"].contains("content")) {
      content = &choice["message"]["content"];
    }
  }
  if (!content || !content->is_string()) {
    throw EngineError("chat response has no choices[0].message.content");
  }
  return content->get<std::string>();
}

std::string request_key(const std::string& request_body) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(request_body.data()), request_body.size(), digest);
  std::ostringstream out;
  for (unsigned char c : digest) out << std::hex << std::setw(2) << std::setfill('0') << int(c);
  return out.str();
}

Endpoint parse_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw InputError("endpoint URL has no scheme: " + url);
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw InputError("endpoint URL scheme must be http or https: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  Endpoint e;
  e.scheme_host_port = url.substr(0, path_start);
  e.path = path_start == std::string::npos ? "/" : url.substr(path_start);
  if (e.scheme_host_port.size() <= scheme_end + 3) throw InputError("endpoint URL has no host: " + url);
  return e;
}

struct HttpChatClient::Impl {
  explicit Impl(LlmClientConfig c)
      : config(std::move(c)),
        endpoint(parse_endpoint(config.endpoint)),
        slots(static_cast<std::ptrdiff_t>(config.max_in_flight)) {}

  LlmClientConfig config;
  Endpoint endpoint;
  std::counting_semaphore<> slots;
};

HttpChatClient::HttpChatClient(LlmClientConfig config) {
  validate_llm_config(config);
  impl_ = std::make_unique<Impl>(std::move(config));
}

HttpChatClient::~HttpChatClient() = default;

std::string HttpChatClient::complete(const std::vector<ChatMessage>& messages) {
  const auto& cfg = impl_->config;
  const std::string body = chat_request_body(cfg.model, messages);

  httplib::Headers headers;
  if (const char* key = std::getenv(cfg.api_key_env.c_str()); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  impl_->slots.acquire();
  struct Release {
    std::counting_semaphore<>& s;
    ~Release() { s.release(); }
  } release{impl_->slots};

  httplib::Client client(impl_->endpoint.scheme_host_port);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  std::string last_error;
  auto delay = cfg.backoff;
  for (int attempt = 1; attempt <= cfg.retries + 1; ++attempt) {
    auto res = client.Post(impl_->endpoint.path, headers, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
    } else if (res->status == 200) {
      if (cfg.transcript_dir) write_transcript(*cfg.transcript_dir, body, res->body, res->status, attempt);
      return completion_from_response(res->body);
    } else {
      last_error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
      if (!retryable(res->status)) break;
    }
    if (attempt <= cfg.retries) {
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
  }
  throw EngineError("chat completion failed after retries (" + last_error + ")");
}

ReplayChatClient::ReplayChatClient(std::string model, std::filesystem::path transcript_dir)
    : model_(std::move(model)), dir_(std::move(transcript_dir)) {
  if (!std::filesystem::is_directory(dir_)) {
    throw InputError("transcript directory not found: " + dir_.string());
  }
}

std::string ReplayChatClient::complete(const std::vector<ChatMessage>& messages) {
  const std::string body = chat_request_body(model_, messages);
  const auto path = dir_ / (request_key(body) + ".json");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EngineError("no transcript for request " + path.filename().string());
  const auto record = json::parse(in, nullptr, false);
  if (record.is_discarded() || !record.contains("response") || !record["response"].is_string()) {
    throw EngineError("malformed transcript " + path.string());
  }
  return completion_from_response(record["response"].get<std::string>());
}

}  // namespace tokattr
