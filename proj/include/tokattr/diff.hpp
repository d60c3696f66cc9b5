#pragma once

// Myers O(ND) diff over Unicode code points. The edit script is minimal, so
// the equal runs it reports spell a longest common subsequence.

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace tokattr::diff {

enum class Op { kEqual, kDelete, kInsert };

// A run of one operation. Positions index the code point sequences; kDelete
// consumes only `a`, kInsert only `b`, kEqual both.
struct Edit {
  Op op;
  std::size_t a_pos;
  std::size_t b_pos;
  std::size_t length;
};

std::vector<Edit> myers(std::span<const char32_t> a, std::span<const char32_t> b);

// For every byte of `a`, the byte of `b` it aligns with under the code point
// diff, or nullopt when it was deleted.
struct ByteAlignment {
  std::vector<std::optional<std::size_t>> a_to_b;

  bool matched(std::size_t a_byte) const { return a_to_b[a_byte].has_value(); }
  std::size_t matched_bytes() const;
};

ByteAlignment align_bytes(std::string_view a, std::string_view b);

}  // namespace tokattr::diff
