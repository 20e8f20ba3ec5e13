#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "ddm/matrix.hpp"
#include "ddm/rng.hpp"

namespace ddm {

/// β_{1:T} and ᾱ_t = ∏_{i≤t}(1 − β_i). Steps are 1-based; step 0 means "no noise".
struct NoiseSchedule {
  std::vector<double> beta;
  std::vector<double> alpha_bar;

  std::size_t steps() const { return beta.size(); }

  /// ᾱ_t for t in [0, T], with ᾱ_0 = 1.
  double alpha_bar_at(std::size_t t) const {
    detail::require(t <= steps(), "alpha_bar_at: step " + std::to_string(t) + " outside [0, " +
                                      std::to_string(steps()) + "]");
    return t == 0 ? 1.0 : alpha_bar[t - 1];
  }
};

/// Running-product ᾱ for an arbitrary β sequence.
inline NoiseSchedule schedule_from_betas(std::vector<double> beta) {
  detail::require(!beta.empty(), "schedule_from_betas: empty schedule");
  NoiseSchedule s;
  double prod = 1.0;
  for (double b : beta) {
    detail::require(b > 0.0 && b < 1.0, "schedule_from_betas: beta must lie in (0, 1)");
    prod *= 1.0 - b;
    s.alpha_bar.push_back(prod);
  }
  s.beta = std::move(beta);
  return s;
}

inline NoiseSchedule build_linear_schedule(std::size_t steps, double beta_start, double beta_end) {
  detail::require(steps >= 1, "build_linear_schedule: T must be >= 1");
  detail::require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0,
                  "build_linear_schedule: need 0 < beta_start <= beta_end < 1");
  std::vector<double> beta(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    beta[i] = beta_start + (beta_end - beta_start) * frac;
  }
  return schedule_from_betas(std::move(beta));
}

inline NoiseSchedule default_schedule() { return build_linear_schedule(1000, 1e-4, 0.02); }

constexpr double kSigmaFloor = 1e-6;

/// Per-coordinate population mean and floored standard deviation over rows.
struct BatchStats {
  std::vector<double> mu;
  std::vector<double> sigma;
};

inline BatchStats compute_batch_stats(const DenseMatrix& x) {
  detail::require(x.rows() >= 1, "compute_batch_stats: empty batch");
  const std::size_t n = x.rows(), d = x.cols();
  BatchStats s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) s.mu[j] += x(i, j);
  for (double& m : s.mu) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x(i, j) - s.mu[j];
      s.sigma[j] += c * c;
    }
  for (double& v : s.sigma) v = std::max(std::sqrt(v / static_cast<double>(n)), kSigmaFloor);
  return s;
}

enum class NoiseMode { Directional, AnisotropicOnly, White };

inline std::string_view to_string(NoiseMode m) {
  switch (m) {
    case NoiseMode::Directional: return "directional";
    case NoiseMode::AnisotropicOnly: return "aniso_only";
    case NoiseMode::White: return "white";
  }
  return "?";
}

inline NoiseMode parse_noise_mode(std::string_view s) {
  if (s == "directional") return NoiseMode::Directional;
  if (s == "aniso_only") return NoiseMode::AnisotropicOnly;
  if (s == "white") return NoiseMode::White;
  throw ContractError("unknown noise mode '" + std::string(s) + "'; valid: {directional, aniso_only, white}");
}

constexpr NoiseMode kAllNoiseModes[] = {NoiseMode::Directional, NoiseMode::AnisotropicOnly, NoiseMode::White};

/// Maps a raw N(0, I) draw to the noise of `mode`:
///   White            ε
///   AnisotropicOnly  ε̄ = μ + σ ⊙ ε
///   Directional      ε′ = sgn(x₀) ⊙ |ε̄|, sgn(0) = +1
inline DenseMatrix shape_noise(NoiseMode mode, const DenseMatrix& x0, const BatchStats& stats, DenseMatrix eps) {
  detail::same_shape(x0, eps, "shape_noise");
  if (stats.mu.size() != x0.cols() || stats.sigma.size() != x0.cols())
    throw DimensionError("shape_noise: stats have dimension " + std::to_string(stats.mu.size()) +
                         ", features have " + std::to_string(x0.cols()));
  if (mode == NoiseMode::White) return eps;
  for (std::size_t i = 0; i < eps.rows(); ++i)
    for (std::size_t j = 0; j < eps.cols(); ++j) {
      double e = stats.mu[j] + stats.sigma[j] * eps(i, j);
      if (mode == NoiseMode::Directional) e = x0(i, j) < 0.0 ? -std::abs(e) : std::abs(e);
      eps(i, j) = e;
    }
  return eps;
}

inline DenseMatrix sample_noise(NoiseMode mode, const DenseMatrix& x0, const BatchStats& stats, RngStream& rng) {
  return shape_noise(mode, x0, stats, gaussian(rng, x0.rows(), x0.cols()));
}

/// X_t = √ᾱ_t·X₀ + √(1−ᾱ_t)·noise, one fresh draw per node and coordinate.
/// t = 0 returns X₀ without consuming randomness.
inline DenseMatrix diffuse_to_step(const DenseMatrix& x0, std::size_t t, const NoiseSchedule& sched, NoiseMode mode,
                                   const BatchStats& stats, RngStream& rng) {
  detail::require(t <= sched.steps(), "diffuse_to_step: step " + std::to_string(t) + " outside [1, " +
                                          std::to_string(sched.steps()) + "]");
  if (t == 0) return x0;
  const double ab = sched.alpha_bar_at(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  DenseMatrix noise = sample_noise(mode, x0, stats, rng);
  DenseMatrix xt(x0.rows(), x0.cols());
  auto out = xt.values();
  auto xv = x0.values();
  auto nv = noise.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * xv[i] + b * nv[i];
  return xt;
}

}  // namespace ddm
