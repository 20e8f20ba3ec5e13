#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <vector>

#include "ddm/matrix.hpp"

namespace ddm {

namespace detail {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Counter-based random stream. The n-th draw is a pure function of
/// (seed, split path, n), so streams never share state and splitting is free.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), key_(detail::mix64(seed ^ 0x6A09E667F3BCC908ull)) {}

  /// Child stream identified by `index`; the parent is left untouched.
  RngStream split(std::uint64_t index) const {
    RngStream child = *this;
    child.path_.push_back(index);
    child.key_ = detail::mix64(key_ ^ detail::mix64(index + 0xBB67AE8584CAA73Bull));
    child.counter_ = 0;
    child.spare_.reset();
    return child;
  }

  std::uint64_t seed() const { return seed_; }
  const std::vector<std::uint64_t>& path() const { return path_; }

  std::uint64_t next_u64() {
    const std::uint64_t n = counter_++;
    return detail::mix64(key_ + detail::mix64(n * detail::kGolden + 0x3C6EF372FE94F82Bull));
  }

  /// Uniform on the open interval (0, 1).
  double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t uniform_index(std::size_t n) {
    detail::require(n > 0, "uniform_index: empty range");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
  }

  /// Standard normal via Box–Muller; the second variate of each pair is cached.
  double normal() {
    if (spare_) {
      double v = *spare_;
      spare_.reset();
      return v;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    return r * std::cos(theta);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(i)]);
  }

 private:
  std::uint64_t seed_;
  std::vector<std::uint64_t> path_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::optional<double> spare_;
};

/// rows×cols matrix of i.i.d. N(0, 1) draws.
inline DenseMatrix gaussian(RngStream& rng, std::size_t rows, std::size_t cols) {
  detail::require(rows >= 1 && cols >= 1, "gaussian: rows and cols must be >= 1");
  DenseMatrix m(rows, cols);
  for (double& v : m.values()) v = rng.normal();
  return m;
}

}  // namespace ddm
