#pragma once

// Chat-completion client for the prompted baselines. Every exchange can be
// written to a transcript directory and replayed later without the network.

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace tokattr {

struct ChatMessage {
  std::string role;
  std::string content;
};

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
};

struct LlmClientConfig {
  std::string endpoint;  // e.g. https://api.example.com/v1/chat/completions
  std::string model;
  std::chrono::milliseconds timeout{60000};
  int retries = 3;
  std::chrono::milliseconds backoff{500};
  std::size_t max_in_flight = 4;
  std::string api_key_env = "TOKATTR_LLM_API_KEY";
  std::optional<std::filesystem::path> transcript_dir;
};

void validate_llm_config(const LlmClientConfig& config);

// The request body sent to the endpoint: {model, messages, temperature: 0}.
std::string chat_request_body(const std::string& model, const std::vector<ChatMessage>& messages);
// choices[0].message.content; EngineError when absent.
std::string completion_from_response(const std::string& response_body);
// Hex SHA-256 of the request body; transcript files are named after it.
std::string request_key(const std::string& request_body);

struct Endpoint {
  std::string scheme_host_port;
  std::string path;
};
Endpoint parse_endpoint(const std::string& url);

class HttpChatClient : public ChatClient {
 public:
  explicit HttpChatClient(LlmClientConfig config);
  ~HttpChatClient() override;
  std::string complete(const std::vector<ChatMessage>& messages) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Answers from transcripts written by HttpChatClient. EngineError when a
// request has no recorded transcript.
class ReplayChatClient : public ChatClient {
 public:
  ReplayChatClient(std::string model, std::filesystem::path transcript_dir);
  std::string complete(const std::vector<ChatMessage>& messages) override;

 private:
  std::string model_;
  std::filesystem::path dir_;
};

}  // namespace tokattr
