#pragma once

// JSON-over-HTTP facade for detection and attribution on stored sessions.
//
//   POST /api/sessions                  create (extract or import a trace)
//   GET  /api/sessions/{id}
//   POST /api/sessions/{id}/detect      {layer, theta}
//   POST /api/sessions/{id}/attribute   {span|token_span, layer, K, L, boundary}
//   GET  /health

#include <filesystem>
#include <memory>
#include <string>

#include "tokattr/extractor.hpp"

namespace httplib {
class Server;
}

namespace tokattr {

inline constexpr int kApiSchemaVersion = 1;

struct ServiceConfig {
  std::filesystem::path data_dir;
  std::shared_ptr<Extractor> extractor;  // may be null
  std::string model;                     // passed to the extractor
  std::string template_id = "inst-v1";
  std::string cors_origin = "*";
  // Allow {"trace_dir": ...} on session creation to import an existing trace.
  bool allow_trace_import = true;
};

struct ApiResponse {
  int status = 200;
  std::string body;  // JSON
};

class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();

  ApiResponse create_session(const std::string& body);
  ApiResponse get_session(const std::string& id);
  ApiResponse detect(const std::string& id, const std::string& body);
  ApiResponse attribute(const std::string& id, const std::string& body);
  ApiResponse health() const;

  // Registers the routes and CORS handling on `server`.
  void mount(httplib::Server& server);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Blocks serving on host:port until the process is stopped.
void run_service(ServiceConfig config, const std::string& host, int port);

}  // namespace tokattr
