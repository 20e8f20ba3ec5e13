#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "ddm/error.hpp"

namespace ddm {

/// Row-major dense matrix of doubles.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_)
      throw DimensionError("DenseMatrix: " + std::to_string(values_.size()) +
                           " values for shape " + std::to_string(rows_) + "x" +
                           std::to_string(cols_));
  }
  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    values_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionError("DenseMatrix: ragged initializer");
      values_.insert(values_.end(), r.begin(), r.end());
    }
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  std::string shape_string() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

/// One stored entry of a sparse adjacency.
struct AdjEntry {
  std::size_t row;
  std::size_t col;
  double weight;
  friend bool operator==(const AdjEntry&, const AdjEntry&) = default;
};

/// Coordinate-format adjacency, entries sorted row-major without duplicates.
class SparseAdjacency {
 public:
  SparseAdjacency() = default;
  explicit SparseAdjacency(std::size_t node_count) : node_count_(node_count) {}

  /// Builds from arbitrary entries: sorts, sums duplicates, validates.
  SparseAdjacency(std::size_t node_count, std::vector<AdjEntry> entries) : node_count_(node_count) {
    for (const auto& e : entries) {
      if (e.row >= node_count || e.col >= node_count)
        throw ContractError("SparseAdjacency: entry (" + std::to_string(e.row) + "," +
                            std::to_string(e.col) + ") outside " + std::to_string(node_count) +
                            " nodes");
      if (!std::isfinite(e.weight) || e.weight < 0.0)
        throw ContractError("SparseAdjacency: weights must be finite and non-negative");
    }
    std::sort(entries.begin(), entries.end(), [](const AdjEntry& a, const AdjEntry& b) {
      return std::tie(a.row, a.col) < std::tie(b.row, b.col);
    });
    for (const auto& e : entries) {
      if (!entries_.empty() && entries_.back().row == e.row && entries_.back().col == e.col)
        entries_.back().weight += e.weight;
      else
        entries_.push_back(e);
    }
  }

  /// Undirected graph from an edge list; each edge contributes both directions.
  static SparseAdjacency from_undirected_edges(
      std::size_t node_count, std::span<const std::pair<std::size_t, std::size_t>> edges) {
    std::vector<AdjEntry> entries;
    entries.reserve(edges.size() * 2);
    for (auto [a, b] : edges) {
      entries.push_back({a, b, 1.0});
      if (a != b) entries.push_back({b, a, 1.0});
    }
    // Repeated edges collapse to weight 1.
    SparseAdjacency adj(node_count, std::move(entries));
    for (auto& e : adj.entries_) e.weight = 1.0;
    return adj;
  }

  static SparseAdjacency identity(std::size_t n) {
    std::vector<AdjEntry> entries;
    for (std::size_t i = 0; i < n; ++i) entries.push_back({i, i, 1.0});
    return SparseAdjacency(n, std::move(entries));
  }

  std::size_t node_count() const { return node_count_; }
  std::span<const AdjEntry> entries() const { return entries_; }
  std::size_t nnz() const { return entries_.size(); }

  DenseMatrix to_dense() const {
    DenseMatrix d(node_count_, node_count_);
    for (const auto& e : entries_) d(e.row, e.col) += e.weight;
    return d;
  }

  bool is_symmetric(double tol = 0.0) const {
    DenseMatrix d = to_dense();
    for (std::size_t i = 0; i < node_count_; ++i)
      for (std::size_t j = i + 1; j < node_count_; ++j)
        if (std::abs(d(i, j) - d(j, i)) > tol) return false;
    return true;
  }

  /// Out-degree (row sums of weights).
  std::vector<double> degrees() const {
    std::vector<double> deg(node_count_, 0.0);
    for (const auto& e : entries_) deg[e.row] += e.weight;
    return deg;
  }

  friend bool operator==(const SparseAdjacency&, const SparseAdjacency&) = default;

 private:
  std::size_t node_count_ = 0;
  std::vector<AdjEntry> entries_;
};

namespace detail {

inline void check_finite(const DenseMatrix& m, const char* op) {
  if (!m.all_finite()) throw NumericError(std::string(op) + ": non-finite output");
}

inline void same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shapes " + a.shape_string() + " and " +
                         b.shape_string() + " differ");
}

}  // namespace detail

inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: cannot multiply " + a.shape_string() + " by " + b.shape_string());
  DenseMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  detail::check_finite(out, "matmul");
  return out;
}

/// aᵀ·b without materializing the transpose.
inline DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows())
    throw DimensionError("matmul_tn: cannot multiply transpose of " + a.shape_string() + " by " +
                         b.shape_string());
  DenseMatrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto arow = a.row(k);
    auto brow = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      auto orow = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

/// a·bᵀ without materializing the transpose.
inline DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt: cannot multiply " + a.shape_string() + " by transpose of " +
                         b.shape_string());
  DenseMatrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto brow = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += arow[k] * brow[k];
      out(i, j) = s;
    }
  }
  return out;
}

inline DenseMatrix spmm(const SparseAdjacency& adj, const DenseMatrix& x) {
  if (adj.node_count() != x.rows())
    throw DimensionError("spmm: adjacency over " + std::to_string(adj.node_count()) +
                         " nodes cannot multiply " + x.shape_string());
  DenseMatrix out(x.rows(), x.cols());
  for (const auto& e : adj.entries()) {
    auto orow = out.row(e.row);
    auto xrow = x.row(e.col);
    for (std::size_t j = 0; j < x.cols(); ++j) orow[j] += e.weight * xrow[j];
  }
  detail::check_finite(out, "spmm");
  return out;
}

/// adjᵀ·x; used for the backward pass of spmm.
inline DenseMatrix spmm_transposed(const SparseAdjacency& adj, const DenseMatrix& x) {
  if (adj.node_count() != x.rows())
    throw DimensionError("spmm_transposed: adjacency over " + std::to_string(adj.node_count()) +
                         " nodes cannot multiply " + x.shape_string());
  DenseMatrix out(x.rows(), x.cols());
  for (const auto& e : adj.entries()) {
    auto orow = out.row(e.col);
    auto xrow = x.row(e.row);
    for (std::size_t j = 0; j < x.cols(); ++j) orow[j] += e.weight * xrow[j];
  }
  return out;
}

inline DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline DenseMatrix operator+(const DenseMatrix& a, const DenseMatrix& b) {
  detail::same_shape(a, b, "add");
  DenseMatrix out = a;
  auto ov = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += bv[i];
  return out;
}

inline DenseMatrix operator-(const DenseMatrix& a, const DenseMatrix& b) {
  detail::same_shape(a, b, "sub");
  DenseMatrix out = a;
  auto ov = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] -= bv[i];
  return out;
}

inline DenseMatrix operator*(double s, const DenseMatrix& a) {
  DenseMatrix out = a;
  for (double& v : out.values()) v *= s;
  return out;
}

inline DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b) {
  detail::same_shape(a, b, "hadamard");
  DenseMatrix out = a;
  auto ov = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] *= bv[i];
  return out;
}

inline DenseMatrix concat_cols(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows())
    throw DimensionError("concat_cols: row counts of " + a.shape_string() + " and " +
                         b.shape_string() + " differ");
  DenseMatrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::copy(a.row(i).begin(), a.row(i).end(), out.row(i).begin());
    std::copy(b.row(i).begin(), b.row(i).end(), out.row(i).begin() + a.cols());
  }
  return out;
}

/// Rows of `m` in the given order.
inline DenseMatrix select_rows(const DenseMatrix& m, std::span<const std::size_t> rows) {
  DenseMatrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= m.rows()) throw DimensionError("select_rows: row index out of range");
    std::copy(m.row(rows[i]).begin(), m.row(rows[i]).end(), out.row(i).begin());
  }
  return out;
}

/// Stacks matrices vertically; all must share a column count.
inline DenseMatrix vstack(std::span<const DenseMatrix> parts) {
  std::size_t rows = 0;
  const std::size_t cols = parts.empty() ? 0 : parts.front().cols();
  for (const auto& p : parts) {
    if (p.cols() != cols) throw DimensionError("vstack: column counts differ");
    rows += p.rows();
  }
  DenseMatrix out(rows, cols);
  std::size_t r = 0;
  for (const auto& p : parts)
    for (std::size_t i = 0; i < p.rows(); ++i, ++r)
      std::copy(p.row(i).begin(), p.row(i).end(), out.row(r).begin());
  return out;
}

inline double frobenius_norm(const DenseMatrix& m) {
  double s = 0.0;
  for (double v : m.values()) s += v * v;
  return std::sqrt(s);
}

inline double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  detail::same_shape(a, b, "max_abs_diff");
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a.values()[i] - b.values()[i]));
  return d;
}

}  // namespace ddm
