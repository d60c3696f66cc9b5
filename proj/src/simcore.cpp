#include "tokattr/simcore.hpp"

#include <numeric>

namespace tokattr {

RowSet::RowSet(LayerView view) : view_(view), indices_(view.rows()) {
  std::iota(indices_.begin(), indices_.end(), std::size_t{0});
}

RowSet::RowSet(LayerView view, std::vector<std::size_t> indices)
    : view_(view), indices_(std::move(indices)) {
  for (std::size_t idx : indices_) {
    if (idx >= view_.rows()) {
      throw InputError("row index " + std::to_string(idx) + " out of range");
    }
  }
}

Matrix similarity_matrix(const RowSet& rows, const RowSet& cols) {
  if (rows.dim() != cols.dim()) {
    throw InputError("similarity_matrix: dimension mismatch " + std::to_string(rows.dim()) +
                     " vs " + std::to_string(cols.dim()));
  }
  std::vector<double> col_norms(cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j) col_norms[j] = norm(cols.row(j));

  Matrix out(rows.size(), cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = rows.row(i);
    const double rn = norm(r);
    for (std::size_t j = 0; j < cols.size(); ++j) {
      if (rn == 0.0 || col_norms[j] == 0.0) {
        out(i, j) = 0.0;
      } else {
        out(i, j) = dot(r, cols.row(j)) / (rn * col_norms[j]);
      }
    }
  }
  return out;
}

PrefixSums::PrefixSums(const RowSet& rows)
    : count_(rows.size()), dim_(rows.dim()), sums_((rows.size() + 1) * rows.dim(), 0.0) {
  for (std::size_t p = 0; p < count_; ++p) {
    const auto v = rows.row(p);
    const double* prev = sums_.data() + p * dim_;
    double* next = sums_.data() + (p + 1) * dim_;
    for (std::size_t d = 0; d < dim_; ++d) next[d] = prev[d] + static_cast<double>(v[d]);
  }
}

void PrefixSums::window_mean(std::size_t start, std::size_t end, std::span<double> out) const {
  if (start >= end || end > count_) {
    throw InputError("window [" + std::to_string(start) + ", " + std::to_string(end) +
                     ") invalid for " + std::to_string(count_) + " rows");
  }
  const double inv = 1.0 / static_cast<double>(end - start);
  const double* hi = sums_.data() + end * dim_;
  const double* lo = sums_.data() + start * dim_;
  for (std::size_t d = 0; d < dim_; ++d) out[d] = (hi[d] - lo[d]) * inv;
}

std::vector<double> PrefixSums::window_mean(std::size_t start, std::size_t end) const {
  std::vector<double> out(dim_);
  window_mean(start, end, out);
  return out;
}

}  // namespace tokattr
