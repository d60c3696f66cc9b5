#pragma once

// On-disk container for hidden-state traces.
//
// A trace directory holds two files:
//   manifest.json  UTF-8 JSON describing the model, shape and every token.
//   states.f32     raw little-endian float32, layer-major, then token, then
//                  dimension, no header.
//
// Layer 0 is the embedding output; layer k >= 1 is the output of block k.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tokattr {

inline constexpr int kTraceFormatVersion = 1;

enum class Segment { kTemplate, kDocument, kQuestion, kAnswer };

std::string_view to_string(Segment segment);
// Throws InputError on an unknown name.
Segment parse_segment(std::string_view name);

struct TokenRecord {
  std::size_t index = 0;
  std::int64_t token_id = 0;
  std::string text;
  Segment segment = Segment::kTemplate;
  // Half-open byte offsets into the UTF-8 prompt.
  std::size_t char_start = 0;
  std::size_t char_end = 0;
  std::optional<std::uint32_t> passage_index;

  bool operator==(const TokenRecord&) const = default;
};

struct TraceManifest {
  int format_version = kTraceFormatVersion;
  std::string model_name;
  std::size_t layer_count = 0;
  std::size_t hidden_dim = 0;
  std::size_t token_count = 0;
  std::string dtype = "f32";
  std::vector<TokenRecord> tokens;
  std::string prompt_template_id;
  // Full prompt string when the producer recorded it; checked against the
  // token texts by validate_trace.
  std::optional<std::string> prompt;

  bool operator==(const TraceManifest&) const = default;
};

// Dense (layer, token, dim) float tensor stored layer-major.
class HiddenStates {
 public:
  HiddenStates() = default;
  HiddenStates(std::size_t layers, std::size_t tokens, std::size_t dim);
  HiddenStates(std::size_t layers, std::size_t tokens, std::size_t dim,
               std::vector<float> values);

  std::size_t layers() const { return layers_; }
  std::size_t tokens() const { return tokens_; }
  std::size_t dim() const { return dim_; }

  float& at(std::size_t layer, std::size_t token, std::size_t d) {
    return values_[(layer * tokens_ + token) * dim_ + d];
  }
  float at(std::size_t layer, std::size_t token, std::size_t d) const {
    return values_[(layer * tokens_ + token) * dim_ + d];
  }

  std::span<float> vector(std::size_t layer, std::size_t token) {
    return {values_.data() + (layer * tokens_ + token) * dim_, dim_};
  }
  std::span<const float> vector(std::size_t layer, std::size_t token) const {
    return {values_.data() + (layer * tokens_ + token) * dim_, dim_};
  }

  std::span<const float> values() const { return values_; }
  std::span<float> values() { return values_; }

  bool operator==(const HiddenStates& other) const;

 private:
  std::size_t layers_ = 0;
  std::size_t tokens_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> values_;
};

struct Trace {
  TraceManifest manifest;
  HiddenStates states;

  bool operator==(const Trace&) const = default;
};

// Read-only (token_count x hidden_dim) slab for one layer. Borrowed from the
// trace; valid as long as the trace is alive and unmodified.
class LayerView {
 public:
  LayerView(std::span<const float> data, std::size_t rows, std::size_t dim)
      : data_(data), rows_(rows), dim_(dim) {}

  std::size_t rows() const { return rows_; }
  std::size_t dim() const { return dim_; }
  std::span<const float> row(std::size_t i) const {
    return data_.subspan(i * dim_, dim_);
  }

 private:
  std::span<const float> data_;
  std::size_t rows_;
  std::size_t dim_;
};

struct Violation {
  std::string invariant;
  std::string message;

  bool operator==(const Violation&) const = default;
};

std::vector<Violation> validate_trace(const Trace& trace);

// Throws InputError if the trace is invalid or the destination cannot be
// written. Existing files in the destination are replaced.
void write_trace(const Trace& trace, const std::filesystem::path& destination);

// Throws InputError on missing files, malformed or non-UTF-8 manifests,
// unsupported format versions, size mismatches and invariant violations.
Trace read_trace(const std::filesystem::path& source);

// Throws InputError if layer >= layer_count.
LayerView layer_view(const Trace& trace, std::size_t layer);

// Prompt indices of tokens in a segment, in prompt order.
std::vector<std::size_t> segment_indices(const Trace& trace, Segment segment);

// Concatenated token text of a segment.
std::string segment_text(const Trace& trace, Segment segment);

std::size_t expected_state_bytes(const TraceManifest& manifest);

}  // namespace tokattr
