#pragma once

// Numeric kernels shared by detection and attribution. Storage is float32;
// every accumulation runs in double.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tokattr/error.hpp"
#include "tokattr/trace.hpp"

namespace tokattr {

struct Similarity {
  double value = 0.0;
  // Set when either input has zero norm; value is then 0.
  bool degenerate = false;
};

template <typename T, typename U>
double dot(std::span<const T> u, std::span<const U> v) {
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    acc += static_cast<double>(u[i]) * static_cast<double>(v[i]);
  }
  return acc;
}

template <typename T>
double norm(std::span<const T> u) {
  return std::sqrt(dot(u, u));
}

// Throws InputError on dimension mismatch.
template <typename T, typename U>
Similarity cosine(std::span<const T> u, std::span<const U> v) {
  if (u.size() != v.size()) {
    throw InputError("cosine: dimension mismatch " + std::to_string(u.size()) + " vs " +
                     std::to_string(v.size()));
  }
  double uu = 0.0, vv = 0.0, uv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double a = static_cast<double>(u[i]);
    const double b = static_cast<double>(v[i]);
    uu += a * a;
    vv += b * b;
    uv += a * b;
  }
  if (uu == 0.0 || vv == 0.0) return {0.0, true};
  return {uv / (std::sqrt(uu) * std::sqrt(vv)), false};
}

inline Similarity cosine(const std::vector<double>& u, const std::vector<double>& v) {
  return cosine(std::span<const double>(u), std::span<const double>(v));
}

// A selection of rows from a layer view (e.g. only the answer tokens).
class RowSet {
 public:
  explicit RowSet(LayerView view);
  RowSet(LayerView view, std::vector<std::size_t> indices);

  std::size_t size() const { return indices_.size(); }
  std::size_t dim() const { return view_.dim(); }
  std::span<const float> row(std::size_t i) const { return view_.row(indices_[i]); }
  std::size_t source_index(std::size_t i) const { return indices_[i]; }

 private:
  LayerView view_;
  std::vector<std::size_t> indices_;
};

// Row-major dense matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), values_(rows * cols) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(values_).subspan(r * cols_, cols_);
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

// Entry (i, j) = cosine(rows_i, cols_j); zero-norm rows or columns give 0.
Matrix similarity_matrix(const RowSet& rows, const RowSet& cols);

// Row p holds the sum of the first p vectors, so any contiguous window mean
// costs one subtraction.
class PrefixSums {
 public:
  explicit PrefixSums(const RowSet& rows);

  std::size_t count() const { return count_; }
  std::size_t dim() const { return dim_; }
  std::span<const double> row(std::size_t p) const {
    return std::span<const double>(sums_).subspan(p * dim_, dim_);
  }

  // Mean of vectors [start, end). Throws InputError unless
  // 0 <= start < end <= count().
  std::vector<double> window_mean(std::size_t start, std::size_t end) const;
  void window_mean(std::size_t start, std::size_t end, std::span<double> out) const;

 private:
  std::size_t count_;
  std::size_t dim_;
  std::vector<double> sums_;
};

}  // namespace tokattr
