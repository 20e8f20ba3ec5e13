#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ddm/matrix.hpp"
#include "ddm/params.hpp"

namespace ddm::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid until the tape is cleared.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const DenseMatrix& value() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Dynamic reverse-mode tape, rebuilt on every forward pass.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  struct Node {
    DenseMatrix value;
    DenseMatrix grad;
    BackwardFn backward;
    std::string slot;  // non-empty for parameter leaves
    bool needs_grad = false;
  };

  Var constant(DenseMatrix value) { return push(std::move(value), false, nullptr); }

  /// Leaf bound to a ParamStore slot; backward() writes its gradient there.
  Var param(const ParamStore& store, const std::string& name) {
    Var v = push(store.value(name), true, nullptr);
    nodes_[v.id()].slot = name;
    return v;
  }

  Var push(DenseMatrix value, bool needs_grad, BackwardFn backward) {
    ddm::detail::check_finite(value, "tape");
    nodes_.push_back(Node{std::move(value), {}, std::move(backward), {}, needs_grad});
    return Var(this, nodes_.size() - 1);
  }

  const Node& node(std::size_t id) const { return nodes_[id]; }
  Node& node(std::size_t id) { return nodes_[id]; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  const DenseMatrix& grad(std::size_t id) const { return nodes_[id].grad; }

  void accumulate(std::size_t id, const DenseMatrix& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.empty())
      n.grad = g;
    else
      n.grad = n.grad + g;
  }

 private:
  std::vector<Node> nodes_;
};

inline const DenseMatrix& Var::value() const { return tape_->node(id_).value; }

namespace detail {

inline Tape& same_tape(const Var& a, const Var& b, const char* op) {
  if (a.tape() == nullptr || a.tape() != b.tape())
    throw ContractError(std::string(op) + ": operands live on different tapes");
  return *a.tape();
}

}  // namespace detail

/// Runs the reverse sweep from a 1×1 loss into the ParamStore, then clears the tape.
inline void backward(Var loss, ParamStore& params) {
  Tape& tape = *loss.tape();
  const DenseMatrix& lv = loss.value();
  if (lv.rows() != 1 || lv.cols() != 1)
    throw ContractError("backward: loss must be a 1x1 scalar, got " + lv.shape_string());
  params.zero_grad();
  tape.node(loss.id()).grad = DenseMatrix(1, 1, 1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Tape::Node& n = tape.node(i);
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(tape, i);
    if (!n.slot.empty()) {
      DenseMatrix& g = params.grad(n.slot);
      g = g + n.grad;
    }
  }
  tape.clear();
  params.set_gradients_ready(true);
}

inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b, "matmul");
  const bool ng = t.needs_grad(a.id()) || t.needs_grad(b.id());
  return t.push(ddm::matmul(a.value(), b.value()), ng, [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
    const DenseMatrix& g = t.grad(self);
    if (t.needs_grad(ia)) t.accumulate(ia, matmul_nt(g, t.node(ib).value));
    if (t.needs_grad(ib)) t.accumulate(ib, matmul_tn(t.node(ia).value, g));
  });
}

/// Â·x. `adj` must outlive the tape; gradients flow to x only.
inline Var spmm(const SparseAdjacency& adj, Var x) {
  Tape& t = *x.tape();
  return t.push(ddm::spmm(adj, x.value()), t.needs_grad(x.id()), [&adj, ix = x.id()](Tape& t, std::size_t self) {
    t.accumulate(ix, spmm_transposed(adj, t.grad(self)));
  });
}

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b, "add");
  const bool ng = t.needs_grad(a.id()) || t.needs_grad(b.id());
  return t.push(a.value() + b.value(), ng, [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

/// x + 1·row, broadcasting a 1×c row over every row of x.
inline Var add_row(Var x, Var row) {
  Tape& t = detail::same_tape(x, row, "add_row");
  const DenseMatrix& xv = x.value();
  const DenseMatrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != xv.cols())
    throw DimensionError("add_row: cannot broadcast " + rv.shape_string() + " over " + xv.shape_string());
  DenseMatrix out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += rv(0, j);
  const bool ng = t.needs_grad(x.id()) || t.needs_grad(row.id());
  return t.push(std::move(out), ng, [ix = x.id(), ir = row.id()](Tape& t, std::size_t self) {
    const DenseMatrix& g = t.grad(self);
    t.accumulate(ix, g);
    if (t.needs_grad(ir)) {
      DenseMatrix gr(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
      t.accumulate(ir, gr);
    }
  });
}

inline Var hadamard(Var a, Var b) {
  Tape& t = detail::same_tape(a, b, "hadamard");
  const bool ng = t.needs_grad(a.id()) || t.needs_grad(b.id());
  return t.push(ddm::hadamard(a.value(), b.value()), ng, [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
    const DenseMatrix& g = t.grad(self);
    if (t.needs_grad(ia)) t.accumulate(ia, ddm::hadamard(g, t.node(ib).value));
    if (t.needs_grad(ib)) t.accumulate(ib, ddm::hadamard(g, t.node(ia).value));
  });
}

inline Var relu(Var x) {
  Tape& t = *x.tape();
  DenseMatrix out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return t.push(std::move(out), t.needs_grad(x.id()), [ix = x.id()](Tape& t, std::size_t self) {
    DenseMatrix g = t.grad(self);
    auto xv = t.node(ix).value.values();
    auto gv = g.values();
    for (std::size_t i = 0; i < gv.size(); ++i)
      if (xv[i] <= 0.0) gv[i] = 0.0;
    t.accumulate(ix, g);
  });
}

inline Var concat_cols(Var a, Var b) {
  Tape& t = detail::same_tape(a, b, "concat_cols");
  const bool ng = t.needs_grad(a.id()) || t.needs_grad(b.id());
  const std::size_t ca = a.cols();
  return t.push(ddm::concat_cols(a.value(), b.value()), ng, [ia = a.id(), ib = b.id(), ca](Tape& t, std::size_t self) {
    const DenseMatrix& g = t.grad(self);
    DenseMatrix ga(g.rows(), ca), gb(g.rows(), g.cols() - ca);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) (j < ca ? ga(i, j) : gb(i, j - ca)) = g(i, j);
    t.accumulate(ia, ga);
    t.accumulate(ib, gb);
  });
}

/// Column means over all rows: N×c → 1×c.
inline Var row_mean(Var x) {
  Tape& t = *x.tape();
  const DenseMatrix& xv = x.value();
  ddm::detail::require(xv.rows() > 0, "row_mean: empty input");
  DenseMatrix out(1, xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < xv.cols(); ++j) out(0, j) += xv(i, j);
  const double inv = 1.0 / static_cast<double>(xv.rows());
  for (double& v : out.values()) v *= inv;
  return t.push(std::move(out), t.needs_grad(x.id()), [ix = x.id(), n = xv.rows(), inv](Tape& t, std::size_t self) {
    const DenseMatrix& g = t.grad(self);
    DenseMatrix gx(n, g.cols());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) gx(i, j) = g(0, j) * inv;
    t.accumulate(ix, gx);
  });
}

/// Per-segment row means: row i of x belongs to segment seg[i] < count.
inline Var segment_mean(Var x, std::span<const std::size_t> seg, std::size_t count) {
  Tape& t = *x.tape();
  const DenseMatrix& xv = x.value();
  if (seg.size() != xv.rows()) throw DimensionError("segment_mean: segment map does not cover all rows");
  std::vector<double> sizes(count, 0.0);
  for (auto s : seg) {
    ddm::detail::require(s < count, "segment_mean: segment index out of range");
    sizes[s] += 1.0;
  }
  for (double s : sizes) ddm::detail::require(s > 0.0, "segment_mean: empty segment");
  DenseMatrix out(count, xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < xv.cols(); ++j) out(seg[i], j) += xv(i, j) / sizes[seg[i]];
  std::vector<std::size_t> segs(seg.begin(), seg.end());
  return t.push(std::move(out), t.needs_grad(x.id()),
                [ix = x.id(), segs = std::move(segs), sizes = std::move(sizes)](Tape& t, std::size_t self) {
                  const DenseMatrix& g = t.grad(self);
                  DenseMatrix gx(segs.size(), g.cols());
                  for (std::size_t i = 0; i < segs.size(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) gx(i, j) = g(segs[i], j) / sizes[segs[i]];
                  t.accumulate(ix, gx);
                });
}

/// Sum of all entries as a 1×1 node.
inline Var sum(Var x) {
  Tape& t = *x.tape();
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return t.push(DenseMatrix(1, 1, s), t.needs_grad(x.id()),
                [ix = x.id(), r = x.rows(), c = x.cols()](Tape& t, std::size_t self) {
                  t.accumulate(ix, DenseMatrix(r, c, t.grad(self)(0, 0)));
                });
}

/// Mean squared error over every entry, as a 1×1 node.
inline Var mse(Var pred, const DenseMatrix& target) {
  Tape& t = *pred.tape();
  ddm::detail::same_shape(pred.value(), target, "mse");
  DenseMatrix diff = pred.value() - target;
  double s = 0.0;
  for (double v : diff.values()) s += v * v;
  const double inv = 1.0 / static_cast<double>(diff.size());
  return t.push(DenseMatrix(1, 1, s * inv), t.needs_grad(pred.id()),
                [ip = pred.id(), diff = std::move(diff), inv](Tape& t, std::size_t self) {
                  t.accumulate(ip, (2.0 * inv * t.grad(self)(0, 0)) * diff);
                });
}

/// Mean softmax cross-entropy of `logits` rows listed in `rows` against `labels[row]`.
inline Var softmax_cross_entropy(Var logits, std::span<const int> labels, std::span<const std::size_t> rows) {
  Tape& t = *logits.tape();
  const DenseMatrix& z = logits.value();
  if (labels.size() != z.rows()) throw DimensionError("softmax_cross_entropy: one label per row required");
  ddm::detail::require(!rows.empty(), "softmax_cross_entropy: no rows selected");
  DenseMatrix dz(z.rows(), z.cols());
  double loss = 0.0;
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (auto r : rows) {
    const int y = labels[r];
    ddm::detail::require(y >= 0 && static_cast<std::size_t>(y) < z.cols(), "softmax_cross_entropy: label out of range");
    double mx = z(r, 0);
    for (std::size_t j = 1; j < z.cols(); ++j) mx = std::max(mx, z(r, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < z.cols(); ++j) denom += std::exp(z(r, j) - mx);
    loss += -(z(r, static_cast<std::size_t>(y)) - mx - std::log(denom)) * inv;
    for (std::size_t j = 0; j < z.cols(); ++j) dz(r, j) += std::exp(z(r, j) - mx) / denom * inv;
    dz(r, static_cast<std::size_t>(y)) -= inv;
  }
  return t.push(DenseMatrix(1, 1, loss), t.needs_grad(logits.id()),
                [il = logits.id(), dz = std::move(dz)](Tape& t, std::size_t self) {
                  t.accumulate(il, t.grad(self)(0, 0) * dz);
                });
}

}  // namespace ddm::ad
