#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ddm/matrix.hpp"

namespace ddm {

struct ParamSlot {
  DenseMatrix value;
  DenseMatrix grad;
};

/// Named trainable matrices with same-shape gradient accumulators.
/// Iteration order is lexicographic by name.
class ParamStore {
 public:
  void add(const std::string& name, DenseMatrix init) {
    if (slots_.contains(name)) throw ContractError("ParamStore: duplicate slot '" + name + "'");
    DenseMatrix grad(init.rows(), init.cols());
    slots_.emplace(name, ParamSlot{std::move(init), std::move(grad)});
  }

  bool contains(const std::string& name) const { return slots_.contains(name); }
  std::size_t size() const { return slots_.size(); }

  const DenseMatrix& value(const std::string& name) const { return slot(name).value; }
  DenseMatrix& value(const std::string& name) { return slot(name).value; }
  const DenseMatrix& grad(const std::string& name) const { return slot(name).grad; }
  DenseMatrix& grad(const std::string& name) { return slot(name).grad; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : slots_) out.push_back(k);
    return out;
  }

  auto begin() { return slots_.begin(); }
  auto end() { return slots_.end(); }
  auto begin() const { return slots_.begin(); }
  auto end() const { return slots_.end(); }

  void zero_grad() {
    for (auto& [_, s] : slots_) s.grad.fill(0.0);
  }

  /// Set by backward(); an optimizer step requires it.
  bool gradients_ready() const { return gradients_ready_; }
  void set_gradients_ready(bool ready) { gradients_ready_ = ready; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, s] : slots_) n += s.value.size();
    return n;
  }

  /// Value-only equality (gradients ignored).
  bool same_values(const ParamStore& other) const {
    if (slots_.size() != other.slots_.size()) return false;
    for (const auto& [k, s] : slots_) {
      auto it = other.slots_.find(k);
      if (it == other.slots_.end() || !(it->second.value == s.value)) return false;
    }
    return true;
  }

 private:
  ParamSlot& slot(const std::string& name) {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw ContractError("ParamStore: no slot '" + name + "'");
    return it->second;
  }
  const ParamSlot& slot(const std::string& name) const {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw ContractError("ParamStore: no slot '" + name + "'");
    return it->second;
  }

  std::map<std::string, ParamSlot> slots_;
  bool gradients_ready_ = false;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::map<std::string, DenseMatrix> first_moment;
  std::map<std::string, DenseMatrix> second_moment;

  explicit AdamState(AdamOptions opts = {}) : options(opts) {}
};

/// One bias-corrected Adam update over every slot. Consumes the gradients.
inline void adam_step(ParamStore& params, AdamState& state) {
  if (!params.gradients_ready())
    throw ContractError("adam_step: no gradients; call backward() first");
  const auto& o = state.options;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (auto& [name, slot] : params) {
    auto [mit, m_new] = state.first_moment.try_emplace(name, slot.value.rows(), slot.value.cols());
    auto [vit, v_new] = state.second_moment.try_emplace(name, slot.value.rows(), slot.value.cols());
    DenseMatrix& m = mit->second;
    DenseMatrix& v = vit->second;
    if (m.rows() != slot.value.rows() || m.cols() != slot.value.cols())
      throw DimensionError("adam_step: moment shape for '" + name + "' is " + m.shape_string() +
                           ", parameter is " + slot.value.shape_string());
    auto w = slot.value.values();
    auto g = slot.grad.values();
    auto mv = m.values();
    auto vv = v.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      mv[i] = o.beta1 * mv[i] + (1.0 - o.beta1) * g[i];
      vv[i] = o.beta2 * vv[i] + (1.0 - o.beta2) * g[i] * g[i];
      const double mhat = mv[i] / c1;
      const double vhat = vv[i] / c2;
      w[i] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
    }
  }
  params.set_gradients_ready(false);
}

}  // namespace ddm
