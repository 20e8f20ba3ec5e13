#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "ddm/matrix.hpp"
#include "ddm/rng.hpp"

namespace ddm::linalg {

using Vector = std::vector<double>;

inline double dot(const Vector& a, const Vector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const Vector& a) { return std::sqrt(dot(a, a)); }

inline void normalize(Vector& a) {
  const double n = norm(a);
  if (n > 0.0)
    for (double& v : a) v /= n;
}

inline Vector matvec(const DenseMatrix& m, const Vector& x) {
  Vector y(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) s += r[j] * x[j];
    y[i] = s;
  }
  return y;
}

/// xᵀ·M·x for square M.
inline double quadratic_form(const DenseMatrix& m, const Vector& x) { return dot(x, matvec(m, x)); }

/// Lower-triangular L with L·Lᵀ = a. Throws if `a` is not positive definite.
inline DenseMatrix cholesky(const DenseMatrix& a) {
  const std::size_t n = a.rows();
  detail::require(a.cols() == n, "cholesky: matrix must be square");
  DenseMatrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0)) throw NumericError("cholesky: matrix is not positive definite");
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return l;
}

/// Solves L·y = b.
inline Vector forward_substitute(const DenseMatrix& l, Vector b) {
  for (std::size_t i = 0; i < b.size(); ++i) {
    for (std::size_t k = 0; k < i; ++k) b[i] -= l(i, k) * b[k];
    b[i] /= l(i, i);
  }
  return b;
}

/// Solves Lᵀ·x = b.
inline Vector back_substitute_transposed(const DenseMatrix& l, Vector b) {
  for (std::size_t i = b.size(); i-- > 0;) {
    for (std::size_t k = i + 1; k < b.size(); ++k) b[i] -= l(k, i) * b[k];
    b[i] /= l(i, i);
  }
  return b;
}

struct EigenPair {
  double value = 0.0;
  Vector vector;
};

struct PowerOptions {
  std::size_t max_iter = 20000;
  double tol = 1e-13;
};

/// Dominant eigenpair of a symmetric PSD operator by power iteration. The
/// iterate is kept orthogonal to every vector in `deflate`.
inline EigenPair power_iteration(const std::function<Vector(const Vector&)>& apply, Vector start,
                                 const std::vector<Vector>& deflate = {}, PowerOptions opts = {}) {
  auto project_out = [&](Vector& v) {
    for (const auto& u : deflate) {
      const double c = dot(u, v);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * u[i];
    }
  };
  Vector v = std::move(start);
  project_out(v);
  normalize(v);
  double lambda = 0.0;
  for (std::size_t it = 0; it < opts.max_iter; ++it) {
    Vector w = apply(v);
    project_out(w);
    const double next = dot(v, w);
    const double n = norm(w);
    if (n == 0.0) return {0.0, v};
    for (double& x : w) x /= n;
    // Re-orthogonalize against drift.
    project_out(w);
    normalize(w);
    double change = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) change = std::max(change, std::abs(w[i] - v[i]));
    v = std::move(w);
    const bool value_settled = std::abs(next - lambda) <= opts.tol * std::max(std::abs(next), 1e-300);
    lambda = next;
    if (change < 1e-12 || (value_settled && change < 1e-7)) break;
  }
  return {std::max(lambda, 0.0), v};
}

/// Deterministic pseudo-random start vector.
inline Vector start_vector(std::size_t n, std::uint64_t salt = 0) {
  RngStream rng = RngStream(0x5EEDull).split(salt);
  Vector v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

}  // namespace ddm::linalg
