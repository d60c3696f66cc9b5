#pragma once

// Small UTF-8 helpers shared by the dataset, detection and service code.
// All offsets in this project are byte offsets into UTF-8 strings.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace tokattr::text {

struct CodePoint {
  char32_t value;
  std::size_t byte_start;
  std::size_t byte_len;
};

bool is_valid_utf8(std::string_view s);

// Invalid sequences decode to U+FFFD covering one byte each.
std::vector<CodePoint> decode_utf8(std::string_view s);

bool is_space(char32_t cp);
// Unicode general category P* plus ASCII symbols ($ + < = > ^ ` | ~).
bool is_punctuation(char32_t cp);
bool is_ascii_alnum(char32_t cp);

std::string ascii_lower(std::string_view s);
std::string_view trim(std::string_view s);

bool is_blank(std::string_view s);

}  // namespace tokattr::text
