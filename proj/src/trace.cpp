#include "tokattr/trace.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "tokattr/error.hpp"
#include "tokattr/text.hpp"

namespace tokattr {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kStatesFile = "states.f32";

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json token_to_json(const TokenRecord& t) {
  json j = {{"index", t.index},           {"token_id", t.token_id},
            {"text", t.text},             {"segment", to_string(t.segment)},
            {"char_start", t.char_start}, {"char_end", t.char_end}};
  if (t.passage_index) j["passage_index"] = *t.passage_index;
  return j;
}

TokenRecord token_from_json(const json& j) {
  TokenRecord t;
  t.index = j.at("index").get<std::size_t>();
  t.token_id = j.at("token_id").get<std::int64_t>();
  t.text = j.at("text").get<std::string>();
  t.segment = parse_segment(j.at("segment").get<std::string>());
  t.char_start = j.at("char_start").get<std::size_t>();
  t.char_end = j.at("char_end").get<std::size_t>();
  if (auto it = j.find("passage_index"); it != j.end() && !it->is_null()) {
    t.passage_index = it->get<std::uint32_t>();
  }
  return t;
}

json manifest_to_json(const TraceManifest& m) {
  json tokens = json::array();
  for (const auto& t : m.tokens) tokens.push_back(token_to_json(t));
  json j = {{"format_version", m.format_version},
            {"model_name", m.model_name},
            {"layer_count", m.layer_count},
            {"hidden_dim", m.hidden_dim},
            {"token_count", m.token_count},
            {"dtype", m.dtype},
            {"prompt_template_id", m.prompt_template_id},
            {"tokens", std::move(tokens)}};
  if (m.prompt) j["prompt"] = *m.prompt;
  return j;
}

TraceManifest manifest_from_json(const json& j) {
  TraceManifest m;
  m.format_version = j.at("format_version").get<int>();
  if (m.format_version != kTraceFormatVersion) {
    throw InputError("unsupported trace format_version " +
                     std::to_string(m.format_version) + " (supported: " +
                     std::to_string(kTraceFormatVersion) + ")");
  }
  m.model_name = j.at("model_name").get<std::string>();
  m.layer_count = j.at("layer_count").get<std::size_t>();
  m.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  m.token_count = j.at("token_count").get<std::size_t>();
  m.dtype = j.at("dtype").get<std::string>();
  m.prompt_template_id = j.value("prompt_template_id", std::string{});
  for (const auto& t : j.at("tokens")) m.tokens.push_back(token_from_json(t));
  if (auto it = j.find("prompt"); it != j.end() && !it->is_null()) {
    m.prompt = it->get<std::string>();
  }
  return m;
}

std::string join_violations(const std::vector<Violation>& violations) {
  std::string out;
  for (const auto& v : violations) {
    if (!out.empty()) out += "; ";
    out += v.invariant + ": " + v.message;
  }
  return out;
}

}  // namespace

std::string_view to_string(Segment segment) {
  switch (segment) {
    case Segment::kTemplate: return "template";
    case Segment::kDocument: return "document";
    case Segment::kQuestion: return "question";
    case Segment::kAnswer: return "answer";
  }
  return "template";
}

Segment parse_segment(std::string_view name) {
  if (name == "template") return Segment::kTemplate;
  if (name == "document") return Segment::kDocument;
  if (name == "question") return Segment::kQuestion;
  if (name == "answer") return Segment::kAnswer;
  throw InputError("unknown segment '" + std::string(name) + "'");
}

HiddenStates::HiddenStates(std::size_t layers, std::size_t tokens, std::size_t dim)
    : layers_(layers), tokens_(tokens), dim_(dim), values_(layers * tokens * dim, 0.0f) {}

HiddenStates::HiddenStates(std::size_t layers, std::size_t tokens, std::size_t dim,
                           std::vector<float> values)
    : layers_(layers), tokens_(tokens), dim_(dim), values_(std::move(values)) {
  if (values_.size() != layers * tokens * dim) {
    throw InputError("hidden state buffer holds " + std::to_string(values_.size()) +
                     " values, shape requires " + std::to_string(layers * tokens * dim));
  }
}

bool HiddenStates::operator==(const HiddenStates& other) const {
  // Bitwise, so NaN payloads and signed zeros compare faithfully.
  return layers_ == other.layers_ && tokens_ == other.tokens_ && dim_ == other.dim_ &&
         (values_.empty() ||
          std::memcmp(values_.data(), other.values_.data(),
                      values_.size() * sizeof(float)) == 0);
}

std::size_t expected_state_bytes(const TraceManifest& manifest) {
  return manifest.layer_count * manifest.token_count * manifest.hidden_dim * sizeof(float);
}

std::vector<Violation> validate_trace(const Trace& trace) {
  std::vector<Violation> out;
  const auto& m = trace.manifest;
  auto add = [&out](std::string invariant, std::string message) {
    out.push_back({std::move(invariant), std::move(message)});
  };

  if (m.format_version != kTraceFormatVersion) {
    add("format_version", "unsupported version " + std::to_string(m.format_version));
  }
  if (m.dtype != "f32") add("dtype", "dtype must be \"f32\", got \"" + m.dtype + "\"");
  if (m.layer_count < 1) add("layer_count", "layer_count must be >= 1");
  if (m.hidden_dim < 1) add("hidden_dim", "hidden_dim must be >= 1");
  if (m.token_count < 1) add("token_count", "token_count must be >= 1");
  if (m.token_count != m.tokens.size()) {
    add("token_count", "token_count " + std::to_string(m.token_count) + " != " +
                           std::to_string(m.tokens.size()) + " token records");
  }

  const auto& s = trace.states;
  if (s.layers() != m.layer_count || s.tokens() != m.token_count || s.dim() != m.hidden_dim) {
    add("shape", "states shape (" + std::to_string(s.layers()) + "," +
                     std::to_string(s.tokens()) + "," + std::to_string(s.dim()) +
                     ") != manifest (" + std::to_string(m.layer_count) + "," +
                     std::to_string(m.token_count) + "," + std::to_string(m.hidden_dim) + ")");
  } else {
    for (std::size_t l = 0; l < s.layers(); ++l) {
      for (std::size_t t = 0; t < s.tokens(); ++t) {
        for (float v : s.vector(l, t)) {
          if (!std::isfinite(v)) {
            add("finite", "non-finite value at (" + std::to_string(l) + "," +
                              std::to_string(t) + ",·)");
            break;
          }
        }
      }
    }
  }

  std::string joined;
  std::optional<std::uint32_t> last_passage;
  bool any_passage = false;
  bool any_document_without_passage = false;
  for (std::size_t i = 0; i < m.tokens.size(); ++i) {
    const auto& t = m.tokens[i];
    const std::string idx = std::to_string(i);
    joined += t.text;
    if (t.index != i) {
      add("index", "token " + idx + " records index " + std::to_string(t.index));
    }
    if (t.char_end < t.char_start) {
      add("char_range", "token " + idx + " has reversed char range");
    }
    if (i > 0 && t.char_start < m.tokens[i - 1].char_end) {
      add("char_range", "char ranges of tokens " + std::to_string(i - 1) + " and " + idx +
                            " overlap or are out of order");
    }
    if (t.passage_index) {
      if (t.segment != Segment::kDocument) {
        add("passage_index", "token " + idx + " outside the document carries passage_index");
        continue;
      }
      any_passage = true;
      const std::uint32_t p = *t.passage_index;
      const bool ok = last_passage ? (p == *last_passage || p == *last_passage + 1) : p == 0;
      if (!ok) {
        add("passage_index", "token " + idx + " passage_index " + std::to_string(p) +
                                 " breaks contiguity");
      }
      last_passage = p;
    } else if (t.segment == Segment::kDocument) {
      any_document_without_passage = true;
    }
  }
  if (any_passage && any_document_without_passage) {
    add("passage_index", "passage_index must be present on all document tokens or none");
  }
  if (m.prompt && joined != *m.prompt) {
    add("prompt", "concatenated token text does not reproduce the recorded prompt");
  }
  if (m.prompt && !m.tokens.empty() && m.tokens.back().char_end > m.prompt->size()) {
    add("char_range", "char ranges exceed the prompt length");
  }
  return out;
}

void write_trace(const Trace& trace, const fs::path& destination) {
  if (auto violations = validate_trace(trace); !violations.empty()) {
    throw InputError("refusing to write invalid trace: " + join_violations(violations));
  }
  std::error_code ec;
  fs::create_directories(destination, ec);
  if (ec) throw InputError("cannot create " + destination.string() + ": " + ec.message());

  {
    std::ofstream out(destination / kManifestFile, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + (destination / kManifestFile).string());
    out << manifest_to_json(trace.manifest).dump(2) << '\n';
    if (!out) throw InputError("write failed for " + (destination / kManifestFile).string());
  }
  {
    std::ofstream out(destination / kStatesFile, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + (destination / kStatesFile).string());
    const auto values = trace.states.values();
    if constexpr (std::endian::native == std::endian::little) {
      out.write(reinterpret_cast<const char*>(values.data()),
                static_cast<std::streamsize>(values.size_bytes()));
    } else {
      for (float v : values) {
        auto bits = std::bit_cast<std::uint32_t>(v);
        char bytes[4] = {static_cast<char>(bits), static_cast<char>(bits >> 8),
                         static_cast<char>(bits >> 16), static_cast<char>(bits >> 24)};
        out.write(bytes, 4);
      }
    }
    if (!out) throw InputError("write failed for " + (destination / kStatesFile).string());
  }
}

Trace read_trace(const fs::path& source) {
  const fs::path manifest_path = source / kManifestFile;
  const fs::path states_path = source / kStatesFile;
  if (!fs::is_regular_file(manifest_path)) {
    throw InputError("missing file " + manifest_path.string());
  }
  if (!fs::is_regular_file(states_path)) {
    throw InputError("missing file " + states_path.string());
  }

  const std::string manifest_bytes = read_bytes(manifest_path);
  if (!text::is_valid_utf8(manifest_bytes)) {
    throw InputError(manifest_path.string() + " is not valid UTF-8");
  }
  Trace trace;
  try {
    trace.manifest = manifest_from_json(json::parse(manifest_bytes));
  } catch (const json::exception& e) {
    throw InputError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  const auto& m = trace.manifest;

  const std::size_t expected = expected_state_bytes(m);
  const auto actual = static_cast<std::size_t>(fs::file_size(states_path));
  if (actual != expected) {
    throw InputError("size mismatch for " + states_path.string() + ": expected " +
                     std::to_string(expected) + " bytes (" + std::to_string(m.layer_count) +
                     "x" + std::to_string(m.token_count) + "x" +
                     std::to_string(m.hidden_dim) + "x4), found " + std::to_string(actual));
  }

  std::vector<float> values(expected / sizeof(float));
  {
    std::ifstream in(states_path, std::ios::binary);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(expected));
    if (!in && expected > 0) throw InputError("short read from " + states_path.string());
  }
  if constexpr (std::endian::native != std::endian::little) {
    for (float& v : values) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      bits = (bits >> 24) | ((bits >> 8) & 0xFF00u) | ((bits << 8) & 0xFF0000u) | (bits << 24);
      v = std::bit_cast<float>(bits);
    }
  }
  trace.states = HiddenStates(m.layer_count, m.token_count, m.hidden_dim, std::move(values));

  if (auto violations = validate_trace(trace); !violations.empty()) {
    throw InputError("invalid trace " + source.string() + ": " + join_violations(violations));
  }
  return trace;
}

LayerView layer_view(const Trace& trace, std::size_t layer) {
  const auto& s = trace.states;
  if (layer >= s.layers()) {
    throw InputError("layer " + std::to_string(layer) + " out of range [0, " +
                     std::to_string(s.layers()) + ")");
  }
  const std::size_t slab = s.tokens() * s.dim();
  return LayerView(s.values().subspan(layer * slab, slab), s.tokens(), s.dim());
}

std::vector<std::size_t> segment_indices(const Trace& trace, Segment segment) {
  std::vector<std::size_t> out;
  for (const auto& t : trace.manifest.tokens) {
    if (t.segment == segment) out.push_back(t.index);
  }
  return out;
}

std::string segment_text(const Trace& trace, Segment segment) {
  std::string out;
  for (const auto& t : trace.manifest.tokens) {
    if (t.segment == segment) out += t.text;
  }
  return out;
}

}  // namespace tokattr
