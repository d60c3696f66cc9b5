#pragma once

// Client side of the hidden-state extractor. The extractor is an external
// program (or HTTP endpoint) that renders the prompt, runs the model and
// writes a trace directory.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tokattr/trace.hpp"

namespace tokattr {

struct ExtractionRequest {
  std::string model;
  std::string document;
  std::string question;
  std::optional<std::string> answer;  // unset with generate
  bool generate = false;
  std::string template_id = "inst-v1";
  std::filesystem::path out_dir;
};

struct ExtractionOutcome {
  std::string answer;
};

class Extractor {
 public:
  virtual ~Extractor() = default;
  // Writes a trace to request.out_dir. Throws EngineError with the
  // extractor's own diagnostic on failure.
  virtual ExtractionOutcome extract(const ExtractionRequest& request) = 0;
};

// Runs `<command...> --model M --doc F --question F (--answer F | --generate)
// --template T --out DIR`. Inputs are passed through files next to out_dir.
class CommandExtractor : public Extractor {
 public:
  explicit CommandExtractor(std::vector<std::string> command);
  ExtractionOutcome extract(const ExtractionRequest& request) override;

 private:
  std::vector<std::string> command_;
};

// POSTs {model, document, question, answer, generate, template, out} to
// <base_url>/extract and expects {"answer": ...} back. The trace directory
// must be reachable from both sides.
class HttpExtractor : public Extractor {
 public:
  explicit HttpExtractor(std::string base_url);
  ExtractionOutcome extract(const ExtractionRequest& request) override;

 private:
  std::string base_url_;
};

class FunctionExtractor : public Extractor {
 public:
  using Fn = std::function<ExtractionOutcome(const ExtractionRequest&)>;
  explicit FunctionExtractor(Fn fn) : fn_(std::move(fn)) {}
  ExtractionOutcome extract(const ExtractionRequest& request) override { return fn_(request); }

 private:
  Fn fn_;
};

// Splits a command line on whitespace; single and double quotes group.
std::vector<std::string> split_command(const std::string& command_line);

struct CommandResult {
  int exit_code = 0;
  std::string output;  // merged stdout and stderr
};

// Runs argv[0] from PATH and waits. Throws EngineError when it cannot start.
CommandResult run_command(const std::vector<std::string>& argv);

// The answer part of an extracted trace: the recorded prompt minus the
// rendered prefix when available, the answer tokens' text otherwise.
std::string answer_from_trace(const Trace& trace, const std::string& document,
                              const std::string& question, const std::string& template_id);

}  // namespace tokattr
