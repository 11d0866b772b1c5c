#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "disengcd/error.hpp"

namespace disengcd {

/// Row-major dense matrix of doubles.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    require(values_.size() == rows_ * cols_, ErrorKind::shape,
            "DenseMatrix: value count " + std::to_string(values_.size()) +
                " does not match " + std::to_string(rows_) + "x" +
                std::to_string(cols_));
  }
  DenseMatrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    values_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      require(row.size() == cols_, ErrorKind::shape, "DenseMatrix: ragged initializer");
      values_.insert(values_.end(), row.begin(), row.end());
    }
  }

  static DenseMatrix zeros(std::size_t rows, std::size_t cols) { return {rows, cols, 0.0}; }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  std::vector<double>& values() noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  bool same_shape(const DenseMatrix& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  bool all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  std::string shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

struct Triplet {
  std::size_t row;
  std::size_t col;
  double weight;
};

/// Compressed sparse row matrix with nonnegative finite weights and no
/// duplicate coordinates. Rows may be empty.
class SparseMatrix {
 public:
  SparseMatrix() = default;

  SparseMatrix(std::size_t rows, std::size_t cols, std::vector<Triplet> entries)
      : rows_(rows), cols_(cols) {
    for (const auto& t : entries) {
      require(t.row < rows && t.col < cols, ErrorKind::contract,
              "SparseMatrix: entry (" + std::to_string(t.row) + "," + std::to_string(t.col) +
                  ") out of range for " + std::to_string(rows) + "x" + std::to_string(cols));
      require(std::isfinite(t.weight) && t.weight >= 0.0, ErrorKind::contract,
              "SparseMatrix: weight must be finite and nonnegative");
    }
    std::sort(entries.begin(), entries.end(), [](const Triplet& a, const Triplet& b) {
      return std::tie(a.row, a.col) < std::tie(b.row, b.col);
    });
    for (std::size_t i = 1; i < entries.size(); ++i) {
      require(entries[i].row != entries[i - 1].row || entries[i].col != entries[i - 1].col,
              ErrorKind::contract,
              "SparseMatrix: duplicate entry (" + std::to_string(entries[i].row) + "," +
                  std::to_string(entries[i].col) + ")");
    }
    row_ptr_.assign(rows + 1, 0);
    col_idx_.reserve(entries.size());
    weights_.reserve(entries.size());
    for (const auto& t : entries) {
      ++row_ptr_[t.row + 1];
      col_idx_.push_back(t.col);
      weights_.push_back(t.weight);
    }
    for (std::size_t r = 0; r < rows; ++r) row_ptr_[r + 1] += row_ptr_[r];
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t nnz() const noexcept { return col_idx_.size(); }
  bool empty() const noexcept { return col_idx_.empty(); }

  std::size_t row_begin(std::size_t r) const { return row_ptr_[r]; }
  std::size_t row_end(std::size_t r) const { return row_ptr_[r + 1]; }
  std::size_t degree(std::size_t r) const { return row_ptr_[r + 1] - row_ptr_[r]; }
  std::size_t col(std::size_t e) const { return col_idx_[e]; }
  double weight(std::size_t e) const { return weights_[e]; }

  const std::vector<std::size_t>& row_ptr() const noexcept { return row_ptr_; }
  const std::vector<std::size_t>& col_idx() const noexcept { return col_idx_; }
  const std::vector<double>& weights() const noexcept { return weights_; }

  /// Row index of every stored entry, in storage order.
  std::vector<std::size_t> entry_rows() const {
    std::vector<std::size_t> out(nnz());
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t e = row_ptr_[r]; e < row_ptr_[r + 1]; ++e) out[e] = r;
    return out;
  }

  std::vector<Triplet> triplets() const {
    std::vector<Triplet> out;
    out.reserve(nnz());
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t e = row_ptr_[r]; e < row_ptr_[r + 1]; ++e)
        out.push_back({r, col_idx_[e], weights_[e]});
    return out;
  }

  /// Each nonempty row rescaled to sum to 1 (mean aggregation).
  SparseMatrix row_normalized() const {
    SparseMatrix out = *this;
    for (std::size_t r = 0; r < rows_; ++r) {
      double total = 0.0;
      for (std::size_t e = row_ptr_[r]; e < row_ptr_[r + 1]; ++e) total += weights_[e];
      if (total <= 0.0) continue;
      for (std::size_t e = row_ptr_[r]; e < row_ptr_[r + 1]; ++e) out.weights_[e] /= total;
    }
    return out;
  }

  SparseMatrix transposed() const {
    std::vector<Triplet> t;
    t.reserve(nnz());
    for (const auto& x : triplets()) t.push_back({x.col, x.row, x.weight});
    return SparseMatrix(cols_, rows_, std::move(t));
  }

  DenseMatrix to_dense() const {
    DenseMatrix out(rows_, cols_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t e = row_ptr_[r]; e < row_ptr_[r + 1]; ++e) out(r, col_idx_[e]) = weights_[e];
    return out;
  }

  friend bool operator==(const SparseMatrix&, const SparseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::size_t> col_idx_;
  std::vector<double> weights_;
};

using SparseAdjacency = SparseMatrix;

// Plain dense kernels shared by the expression graph and by code that runs
// outside of it (reporting, reference computations).

inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.cols() == b.rows(), ErrorKind::shape,
          "matmul: " + a.shape_string() + " x " + b.shape_string());
  DenseMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double av = a(i, k);
      if (av == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

inline DenseMatrix spmm(const SparseMatrix& s, const DenseMatrix& x) {
  require(s.cols() == x.rows(), ErrorKind::shape,
          "spmm: sparse " + std::to_string(s.rows()) + "x" + std::to_string(s.cols()) +
              " x dense " + x.shape_string());
  DenseMatrix out(s.rows(), x.cols());
  for (std::size_t r = 0; r < s.rows(); ++r) {
    auto orow = out.row(r);
    for (std::size_t e = s.row_begin(r); e < s.row_end(r); ++e) {
      const double w = s.weight(e);
      auto xrow = x.row(s.col(e));
      for (std::size_t j = 0; j < x.cols(); ++j) orow[j] += w * xrow[j];
    }
  }
  return out;
}

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/// Numerically stable softmax of a span, written into `out`.
inline void softmax_into(std::span<const double> in, std::span<double> out) {
  if (in.empty()) return;
  const double mx = *std::max_element(in.begin(), in.end());
  double total = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = std::exp(in[i] - mx);
    total += out[i];
  }
  for (auto& v : out) v /= total;
}

inline std::vector<double> softmax(std::span<const double> in) {
  std::vector<double> out(in.size());
  softmax_into(in, out);
  return out;
}

}  // namespace disengcd
