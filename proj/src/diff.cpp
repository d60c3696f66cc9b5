#include "tokattr/diff.hpp"

#include <algorithm>

#include "tokattr/text.hpp"

namespace tokattr::diff {
namespace {

void push(std::vector<Edit>& out, Op op, std::size_t a_pos, std::size_t b_pos, std::size_t len) {
  if (len == 0) return;
  if (!out.empty() && out.back().op == op) {
    auto& last = out.back();
    const bool contiguous_a = op == Op::kInsert || last.a_pos + last.length == a_pos;
    const bool contiguous_b = op == Op::kDelete || last.b_pos + last.length == b_pos;
    if (contiguous_a && contiguous_b) {
      last.length += len;
      return;
    }
  }
  out.push_back({op, a_pos, b_pos, len});
}

// Greedy forward Myers on the middle part; keeps one V snapshot per edit
// distance for backtracking.
void myers_core(std::span<const char32_t> a, std::span<const char32_t> b, std::size_t a_off,
                std::size_t b_off, std::vector<Edit>& out) {
  const auto n = static_cast<std::ptrdiff_t>(a.size());
  const auto m = static_cast<std::ptrdiff_t>(b.size());
  if (n == 0 && m == 0) return;
  if (n == 0) {
    push(out, Op::kInsert, a_off, b_off, b.size());
    return;
  }
  if (m == 0) {
    push(out, Op::kDelete, a_off, b_off, a.size());
    return;
  }

  const std::ptrdiff_t max_d = n + m;
  const std::ptrdiff_t offset = max_d + 1;
  std::vector<std::ptrdiff_t> v(static_cast<std::size_t>(2 * max_d + 3), 0);
  // trace[d] holds v[k] for k in [-d, d] after step d.
  std::vector<std::vector<std::ptrdiff_t>> trace;

  std::ptrdiff_t final_d = -1;
  for (std::ptrdiff_t d = 0; d <= max_d && final_d < 0; ++d) {
    for (std::ptrdiff_t k = -d; k <= d; k += 2) {
      std::ptrdiff_t x;
      if (k == -d || (k != d && v[offset + k - 1] < v[offset + k + 1])) {
        x = v[offset + k + 1];
      } else {
        x = v[offset + k - 1] + 1;
      }
      std::ptrdiff_t y = x - k;
      while (x < n && y < m && a[x] == b[y]) {
        ++x;
        ++y;
      }
      v[offset + k] = x;
      if (x >= n && y >= m) final_d = d;
    }
    trace.emplace_back(v.begin() + offset - d, v.begin() + offset + d + 1);
  }

  // Backtrack from (n, m) collecting runs in reverse.
  std::vector<Edit> rev;
  std::ptrdiff_t x = n, y = m;
  for (std::ptrdiff_t d = final_d; d > 0; --d) {
    const auto& prev = trace[static_cast<std::size_t>(d - 1)];
    auto at = [&](std::ptrdiff_t k) { return prev[static_cast<std::size_t>(k + d - 1)]; };
    const std::ptrdiff_t k = x - y;
    std::ptrdiff_t prev_k;
    if (k == -d || (k != d && at(k - 1) < at(k + 1))) {
      prev_k = k + 1;
    } else {
      prev_k = k - 1;
    }
    const std::ptrdiff_t prev_x = at(prev_k);
    const std::ptrdiff_t prev_y = prev_x - prev_k;
    const std::ptrdiff_t snake_x = (prev_k == k + 1) ? prev_x : prev_x + 1;
    const std::ptrdiff_t snake_y = snake_x - k;
    if (x > snake_x) {
      rev.push_back({Op::kEqual, static_cast<std::size_t>(snake_x),
                     static_cast<std::size_t>(snake_y), static_cast<std::size_t>(x - snake_x)});
    }
    if (prev_k == k + 1) {
      rev.push_back({Op::kInsert, static_cast<std::size_t>(prev_x),
                     static_cast<std::size_t>(prev_y), 1});
    } else {
      rev.push_back({Op::kDelete, static_cast<std::size_t>(prev_x),
                     static_cast<std::size_t>(prev_y), 1});
    }
    x = prev_x;
    y = prev_y;
  }
  if (x > 0) rev.push_back({Op::kEqual, 0, 0, static_cast<std::size_t>(x)});

  for (auto it = rev.rbegin(); it != rev.rend(); ++it) {
    push(out, it->op, it->a_pos + a_off, it->b_pos + b_off, it->length);
  }
}

}  // namespace

std::vector<Edit> myers(std::span<const char32_t> a, std::span<const char32_t> b) {
  std::vector<Edit> out;
  std::size_t prefix = 0;
  while (prefix < a.size() && prefix < b.size() && a[prefix] == b[prefix]) ++prefix;
  std::size_t suffix = 0;
  while (suffix < a.size() - prefix && suffix < b.size() - prefix &&
         a[a.size() - 1 - suffix] == b[b.size() - 1 - suffix]) {
    ++suffix;
  }
  push(out, Op::kEqual, 0, 0, prefix);
  myers_core(a.subspan(prefix, a.size() - prefix - suffix),
             b.subspan(prefix, b.size() - prefix - suffix), prefix, prefix, out);
  push(out, Op::kEqual, a.size() - suffix, b.size() - suffix, suffix);
  return out;
}

std::size_t ByteAlignment::matched_bytes() const {
  return static_cast<std::size_t>(
      std::count_if(a_to_b.begin(), a_to_b.end(), [](const auto& x) { return x.has_value(); }));
}

ByteAlignment align_bytes(std::string_view a, std::string_view b) {
  const auto ca = text::decode_utf8(a);
  const auto cb = text::decode_utf8(b);
  std::vector<char32_t> va, vb;
  va.reserve(ca.size());
  vb.reserve(cb.size());
  for (const auto& c : ca) va.push_back(c.value);
  for (const auto& c : cb) vb.push_back(c.value);

  ByteAlignment out;
  out.a_to_b.assign(a.size(), std::nullopt);
  for (const auto& e : myers(va, vb)) {
    if (e.op != Op::kEqual) continue;
    for (std::size_t i = 0; i < e.length; ++i) {
      const auto& pa = ca[e.a_pos + i];
      const auto& pb = cb[e.b_pos + i];
      // Equal code points decoded from invalid bytes may differ in length.
      if (pa.byte_len != pb.byte_len) continue;
      for (std::size_t k = 0; k < pa.byte_len; ++k) {
        out.a_to_b[pa.byte_start + k] = pb.byte_start + k;
      }
    }
  }
  return out;
}

}  // namespace tokattr::diff
