#include "tokattr/extractor.hpp"

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <iterator>

#include <httplib.h>
#include <json.hpp>

#include "tokattr/error.hpp"
#include "tokattr/llm.hpp"
#include "tokattr/prompt.hpp"

extern char** environ;

namespace tokattr {
namespace {

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
  if (!out) throw EngineError("cannot write " + path.string());
}

std::string tail(const std::string& s, std::size_t n) {
  return s.size() <= n ? s : s.substr(s.size() - n);
}

}  // namespace

std::vector<std::string> split_command(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool in_word = false;
  char quote = 0;
  for (char c : line) {
    if (quote) {
      if (c == quote) quote = 0;
      else cur += c;
    } else if (c == '\'' || c == '"') {
      quote = c;
      in_word = true;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      if (in_word) out.push_back(std::move(cur));
      cur.clear();
      in_word = false;
    } else {
      cur += c;
      in_word = true;
    }
  }
  if (quote) throw InputError("unterminated quote in command: " + line);
  if (in_word) out.push_back(std::move(cur));
  return out;
}

CommandResult run_command(const std::vector<std::string>& argv) {
  if (argv.empty()) throw InputError("empty command");
  char tmpl[] = "/tmp/tokattr-cmd-XXXXXX";
  const int fd = ::mkstemp(tmpl);
  if (fd < 0) throw EngineError(std::string("cannot create capture file: ") + std::strerror(errno));

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, fd, STDOUT_FILENO);
  posix_spawn_file_actions_adddup2(&actions, fd, STDERR_FILENO);
  posix_spawn_file_actions_addopen(&actions, STDIN_FILENO, "/dev/null", O_RDONLY, 0);

  std::vector<char*> args;
  for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);

  pid_t pid = 0;
  const int rc = posix_spawnp(&pid, args[0], &actions, nullptr, args.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(fd);
  if (rc != 0) {
    ::unlink(tmpl);
    throw EngineError("cannot start '" + argv[0] + "': " + std::strerror(rc));
  }
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  CommandResult result;
  std::ifstream in(tmpl, std::ios::binary);
  result.output.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  ::unlink(tmpl);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  return result;
}

std::string answer_from_trace(const Trace& trace, const std::string& document,
                              const std::string& question, const std::string& template_id) {
  if (trace.manifest.prompt) {
    try {
      const auto prefix = render_prompt({document, question, "", template_id});
      const auto& prompt = *trace.manifest.prompt;
      if (prompt.compare(0, prefix.size(), prefix) == 0) return prompt.substr(prefix.size());
    } catch (const InputError&) {
    }
  }
  return segment_text(trace, Segment::kAnswer);
}

CommandExtractor::CommandExtractor(std::vector<std::string> command) : command_(std::move(command)) {
  if (command_.empty()) throw InputError("extractor command is empty");
}

ExtractionOutcome CommandExtractor::extract(const ExtractionRequest& req) {
  const auto inputs = req.out_dir.parent_path() / (req.out_dir.filename().string() + ".inputs");
  std::filesystem::create_directories(inputs);
  write_file(inputs / "document.txt", req.document);
  write_file(inputs / "question.txt", req.question);

  auto argv = command_;
  argv.insert(argv.end(), {"--model", req.model, "--doc", (inputs / "document.txt").string(),
                           "--question", (inputs / "question.txt").string()});
  if (req.generate) {
    argv.push_back("--generate");
  } else {
    write_file(inputs / "answer.txt", req.answer.value_or(""));
    argv.insert(argv.end(), {"--answer", (inputs / "answer.txt").string()});
  }
  argv.insert(argv.end(), {"--template", req.template_id, "--out", req.out_dir.string()});

  const auto result = run_command(argv);
  std::error_code ec;
  std::filesystem::remove_all(inputs, ec);
  if (result.exit_code != 0) {
    throw EngineError("extractor exited with code " + std::to_string(result.exit_code) + ": " +
                      tail(result.output, 4000));
  }
  const Trace trace = read_trace(req.out_dir);
  if (!req.generate) return {req.answer.value_or("")};
  return {answer_from_trace(trace, req.document, req.question, req.template_id)};
}

HttpExtractor::HttpExtractor(std::string base_url) : base_url_(std::move(base_url)) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
  parse_endpoint(base_url_ + "/extract");
}

ExtractionOutcome HttpExtractor::extract(const ExtractionRequest& req) {
  const auto endpoint = parse_endpoint(base_url_ + "/extract");
  nlohmann::json body{{"model", req.model},          {"document", req.document},
                      {"question", req.question},    {"generate", req.generate},
                      {"template", req.template_id}, {"out", req.out_dir.string()}};
  body["answer"] = req.answer ? nlohmann::json(*req.answer) : nlohmann::json(nullptr);

  httplib::Client client(endpoint.scheme_host_port);
  client.set_read_timeout(3600, 0);
  const auto res = client.Post(endpoint.path, body.dump(), "application/json");
  if (!res) throw EngineError("extractor unreachable: " + httplib::to_string(res.error()));
  if (res->status != 200) {
    throw EngineError("extractor returned HTTP " + std::to_string(res->status) + ": " +
                      tail(res->body, 4000));
  }
  const auto reply = nlohmann::json::parse(res->body, nullptr, false);
  const Trace trace = read_trace(req.out_dir);
  if (!reply.is_discarded() && reply.contains("answer") && reply["answer"].is_string()) {
    return {reply["answer"].get<std::string>()};
  }
  if (!req.generate) return {req.answer.value_or("")};
  return {answer_from_trace(trace, req.document, req.question, req.template_id)};
}

}  // namespace tokattr
