#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "ddm/matrix.hpp"
#include "ddm/rng.hpp"

namespace ddm {

/// Multinomial logistic regression over standardized features.
struct LinearModel {
  DenseMatrix weights;  // d × C
  DenseMatrix bias;     // 1 × C
  std::vector<double> mean, scale;

  std::size_t num_classes() const { return weights.cols(); }

  DenseMatrix standardize(const DenseMatrix& x) const {
    if (x.cols() != mean.size())
      throw DimensionError("LinearModel: features have " + std::to_string(x.cols()) + " columns, model expects " +
                           std::to_string(mean.size()));
    DenseMatrix z(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) z(i, j) = (x(i, j) - mean[j]) / scale[j];
    return z;
  }

  DenseMatrix logits(const DenseMatrix& x) const {
    DenseMatrix z = matmul(standardize(x), weights);
    for (std::size_t i = 0; i < z.rows(); ++i)
      for (std::size_t c = 0; c < z.cols(); ++c) z(i, c) += bias(0, c);
    return z;
  }

  /// Features only: labels never enter prediction.
  std::vector<int> predict(const DenseMatrix& x) const {
    const DenseMatrix z = logits(x);
    std::vector<int> out(z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) {
      auto r = z.row(i);
      out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
    }
    return out;
  }
};

struct LogRegOptions {
  double reg = 1e-3;
  std::size_t max_iter = 5000;
  double grad_tol = 1e-5;
  /// Classes modelled; 0 means max(label) + 1.
  std::size_t num_classes = 0;
};

namespace detail {

struct LogRegObjective {
  const DenseMatrix& z;  // standardized features
  std::span<const int> y;
  double reg;

  /// Mean cross-entropy + (reg/2)·‖W‖²; fills gradients when requested.
  double operator()(const DenseMatrix& w, const DenseMatrix& b, DenseMatrix* gw, DenseMatrix* gb) const {
    const std::size_t n = z.rows(), c = w.cols();
    const DenseMatrix logits = matmul(z, w);
    double loss = 0.0;
    DenseMatrix resid(n, c);
    std::vector<double> p(c);
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -INFINITY;
      for (std::size_t k = 0; k < c; ++k) mx = std::max(mx, logits(i, k) + b(0, k));
      double denom = 0.0;
      for (std::size_t k = 0; k < c; ++k) denom += (p[k] = std::exp(logits(i, k) + b(0, k) - mx));
      const auto yi = static_cast<std::size_t>(y[i]);
      loss -= logits(i, yi) + b(0, yi) - mx - std::log(denom);
      for (std::size_t k = 0; k < c; ++k) resid(i, k) = p[k] / denom - (k == yi ? 1.0 : 0.0);
    }
    const double inv = 1.0 / static_cast<double>(n);
    loss *= inv;
    double wn = 0.0;
    for (double v : w.values()) wn += v * v;
    loss += 0.5 * reg * wn;
    if (gw) {
      *gw = inv * matmul_tn(z, resid);
      auto g = gw->values();
      auto wv = w.values();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += reg * wv[i];
    }
    if (gb) {
      *gb = DenseMatrix(1, c);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < c; ++k) (*gb)(0, k) += resid(i, k) * inv;
    }
    return loss;
  }
};

}  // namespace detail

struct LogRegFit {
  LinearModel model;
  std::vector<double> loss_history;
  std::size_t iterations = 0;
};

/// Full-batch gradient descent with Armijo backtracking, so the objective is
/// non-increasing. Stops at gradient norm < grad_tol or max_iter iterations.
/// `init_rng`, when given, draws small random initial weights.
inline LogRegFit fit_logistic_regression(const DenseMatrix& x, std::span<const int> y, const LogRegOptions& opts = {},
                                         RngStream* init_rng = nullptr) {
  if (x.rows() != y.size())
    throw DimensionError("train_linear_classifier: " + std::to_string(x.rows()) + " rows but " +
                         std::to_string(y.size()) + " labels");
  detail::require(opts.reg >= 0.0, "train_linear_classifier: reg must be >= 0");
  std::set<int> present(y.begin(), y.end());
  detail::require(present.size() >= 2, "train_linear_classifier: at least two classes required");
  detail::require(*present.begin() >= 0, "train_linear_classifier: negative label");
  const std::size_t c = opts.num_classes ? opts.num_classes : static_cast<std::size_t>(*present.rbegin()) + 1;
  detail::require(static_cast<std::size_t>(*present.rbegin()) < c, "train_linear_classifier: label >= num_classes");

  LogRegFit fit;
  LinearModel& m = fit.model;
  const std::size_t n = x.rows(), d = x.cols();
  m.mean.assign(d, 0.0);
  m.scale.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) m.mean[j] += x(i, j) / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) m.scale[j] += std::pow(x(i, j) - m.mean[j], 2) / static_cast<double>(n);
  for (double& s : m.scale) s = s > 1e-24 ? std::sqrt(s) : 1.0;

  m.weights = DenseMatrix(d, c);
  m.bias = DenseMatrix(1, c);
  if (init_rng)
    for (double& v : m.weights.values()) v = 0.01 * init_rng->normal();

  const DenseMatrix z = m.standardize(x);
  const detail::LogRegObjective f{z, y, opts.reg};
  DenseMatrix gw, gb;
  double loss = f(m.weights, m.bias, &gw, &gb);
  fit.loss_history.push_back(loss);
  double step = 1.0;
  for (std::size_t it = 0; it < opts.max_iter; ++it) {
    const double gnorm2 = std::pow(frobenius_norm(gw), 2) + std::pow(frobenius_norm(gb), 2);
    if (std::sqrt(gnorm2) < opts.grad_tol) break;
    bool accepted = false;
    while (step > 1e-12) {
      DenseMatrix w2 = m.weights - step * gw;
      DenseMatrix b2 = m.bias - step * gb;
      DenseMatrix gw2, gb2;
      const double trial = f(w2, b2, &gw2, &gb2);
      if (trial <= loss - 0.5 * step * gnorm2) {
        m.weights = std::move(w2);
        m.bias = std::move(b2);
        gw = std::move(gw2);
        gb = std::move(gb2);
        loss = trial;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    fit.loss_history.push_back(loss);
    fit.iterations = it + 1;
    step *= 2.0;
  }
  return fit;
}

inline LinearModel train_linear_classifier(const DenseMatrix& x, std::span<const int> y, double reg,
                                           RngStream* init_rng = nullptr) {
  LogRegOptions o;
  o.reg = reg;
  return fit_logistic_regression(x, y, o, init_rng).model;
}

inline double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  detail::require(predicted.size() == truth.size(), "accuracy: length mismatch");
  if (truth.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

}  // namespace ddm
