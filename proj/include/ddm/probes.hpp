#pragma once

#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <vector>

#include "ddm/autodiff.hpp"
#include "ddm/classifier.hpp"
#include "ddm/diffusion.hpp"
#include "ddm/graph.hpp"
#include "ddm/linalg.hpp"
#include "ddm/params.hpp"

namespace ddm {

// ---------------------------------------------------------------------------
// Probe feature extractor: supervised 2-layer graph convolution

struct ProbeConfig {
  std::size_t hidden_dim = 32;
  std::size_t epochs = 200;
  double lr = 0.01;
  std::uint64_t seed = 0;
};

struct ProbeExtractor {
  ParamStore store;
  Task task = Task::Node;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t num_classes = 0;
  double train_accuracy = 0.0;
};

namespace detail {

struct ProbeInputs {
  BatchedGraph batch;
  SparseAdjacency adj_hat;
  std::vector<int> labels;         // per node (node task) or per graph (graph task)
  std::vector<std::size_t> rows;   // rows of `labels` used for training
};

inline ProbeInputs probe_inputs(const Dataset& ds) {
  ProbeInputs in;
  std::vector<std::size_t> all(ds.graphs.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  in.batch = stack_graphs(ds, all);
  in.adj_hat = normalize_adjacency(in.batch.adjacency);
  in.labels = task_labels(ds);
  if (ds.task == Task::Node) {
    for (std::size_t v = 0; v < ds.node_split.size(); ++v)
      if (ds.node_split[v] == SplitRole::Train) in.rows.push_back(v);
    if (in.rows.empty())
      for (std::size_t v = 0; v < in.labels.size(); ++v) in.rows.push_back(v);
  } else {
    for (std::size_t g = 0; g < in.labels.size(); ++g) in.rows.push_back(g);
  }
  return in;
}

struct ProbeTrace {
  ad::Var hidden;  // per node (node task) or pooled per graph
  ad::Var logits;
};

inline ProbeTrace probe_forward(ad::Tape& tape, const ProbeExtractor& e, const DenseMatrix& x,
                                const SparseAdjacency& adj_hat, const std::vector<std::size_t>& node_to_graph,
                                std::size_t graph_count) {
  using namespace ad;
  auto P = [&](const char* n) { return tape.param(e.store, n); };
  Var h = relu(add_row(ad::matmul(ad::spmm(adj_hat, tape.constant(x)), P("probe1.weight")), P("probe1.bias")));
  if (e.task == Task::Node) {
    Var z = add_row(ad::matmul(ad::spmm(adj_hat, h), P("probe2.weight")), P("probe2.bias"));
    return {h, z};
  }
  Var pooled = segment_mean(h, node_to_graph, graph_count);
  return {pooled, add_row(ad::matmul(pooled, P("probe2.weight")), P("probe2.bias"))};
}

}  // namespace detail

/// Trains the probe on the labeled training rows; its first layer output is
/// the hidden space in which signal-to-noise ratios are measured.
inline ProbeExtractor train_probe_extractor(const Dataset& ds, const ProbeConfig& cfg) {
  if (ds.task == Task::Node)
    detail::require(ds.graphs.front().node_labels.has_value(), "train_probe_extractor: node labels required");
  else
    for (const auto& g : ds.graphs) detail::require(g.graph_label.has_value(), "train_probe_extractor: graph labels required");
  const auto in = detail::probe_inputs(ds);
  ProbeExtractor e;
  e.task = ds.task;
  e.input_dim = ds.feature_dim();
  e.hidden_dim = cfg.hidden_dim;
  e.num_classes = static_cast<std::size_t>(ds.num_classes);
  RngStream rng = RngStream(cfg.seed).split(7);
  auto glorot = [&](std::size_t r, std::size_t c) {
    DenseMatrix m(r, c);
    const double s = std::sqrt(6.0 / static_cast<double>(r + c));
    for (double& v : m.values()) v = rng.uniform(-s, s);
    return m;
  };
  e.store.add("probe1.weight", glorot(e.input_dim, e.hidden_dim));
  e.store.add("probe1.bias", DenseMatrix(1, e.hidden_dim));
  e.store.add("probe2.weight", glorot(e.hidden_dim, e.num_classes));
  e.store.add("probe2.bias", DenseMatrix(1, e.num_classes));

  AdamState adam(AdamOptions{cfg.lr});
  const std::size_t graphs = ds.graphs.size();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    ad::Tape tape;
    auto tr = detail::probe_forward(tape, e, in.batch.features, in.adj_hat, in.batch.node_to_graph, graphs);
    auto loss = ad::softmax_cross_entropy(tr.logits, in.labels, in.rows);
    ad::backward(loss, e.store);
    adam_step(e.store, adam);
  }
  ad::Tape tape;
  auto tr = detail::probe_forward(tape, e, in.batch.features, in.adj_hat, in.batch.node_to_graph, graphs);
  std::size_t hit = 0;
  for (auto r : in.rows) {
    auto row = tr.logits.value().row(r);
    hit += static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) == in.labels[r];
  }
  e.train_accuracy = static_cast<double>(hit) / static_cast<double>(in.rows.size());
  return e;
}

/// Hidden representation of features `x` laid out like the dataset stack.
inline DenseMatrix probe_embed(const ProbeExtractor& e, const Dataset& ds, const DenseMatrix& x) {
  const auto in = detail::probe_inputs(ds);
  if (x.rows() != in.batch.features.rows() || x.cols() != e.input_dim)
    throw DimensionError("probe_embed: features " + x.shape_string() + " do not match the dataset stack");
  ad::Tape tape;
  return detail::probe_forward(tape, e, x, in.adj_hat, in.batch.node_to_graph, ds.graphs.size()).hidden.value();
}

// ---------------------------------------------------------------------------
// Fisher discriminant

struct FisherDiscriminant {
  std::vector<double> w;
  DenseMatrix s_b, s_w;
};

struct Scatter {
  DenseMatrix between, within;
};

/// S_B = Σ_c n_c(m_c − m)(m_c − m)ᵀ and S_W = Σ_c Σ_{i∈c}(h_i − m_c)(h_i − m_c)ᵀ.
inline Scatter scatter_matrices(const DenseMatrix& h, std::span<const int> y) {
  if (h.rows() != y.size()) throw DimensionError("scatter_matrices: one label per row required");
  const std::size_t d = h.cols();
  std::map<int, std::pair<std::vector<double>, std::size_t>> cls;
  std::vector<double> m(d, 0.0);
  for (std::size_t i = 0; i < h.rows(); ++i) {
    auto& [sum, n] = cls[y[i]];
    sum.resize(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
      sum[j] += h(i, j);
      m[j] += h(i, j);
    }
    ++n;
  }
  for (double& v : m) v /= static_cast<double>(h.rows());
  std::map<int, std::vector<double>> means;
  Scatter s{DenseMatrix(d, d), DenseMatrix(d, d)};
  for (auto& [c, p] : cls) {
    auto& mc = means[c];
    mc = p.first;
    for (double& v : mc) v /= static_cast<double>(p.second);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) s.between(a, b) += static_cast<double>(p.second) * (mc[a] - m[a]) * (mc[b] - m[b]);
  }
  std::vector<double> r(d);
  for (std::size_t i = 0; i < h.rows(); ++i) {
    const auto& mc = means[y[i]];
    for (std::size_t j = 0; j < d; ++j) r[j] = h(i, j) - mc[j];
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) s.within(a, b) += r[a] * r[b];
  }
  return s;
}

/// wᵀS_Bw / wᵀS_Ww. Zero when both vanish.
inline double rayleigh_snr(std::span<const double> w, const Scatter& s) {
  const std::vector<double> wv(w.begin(), w.end());
  const double num = linalg::quadratic_form(s.between, wv);
  const double den = linalg::quadratic_form(s.within, wv);
  if (den <= 0.0) return num <= 0.0 ? 0.0 : INFINITY;
  return std::max(num, 0.0) / den;
}

inline double fisher_snr(std::span<const double> w, const DenseMatrix& h, std::span<const int> y) {
  return rayleigh_snr(w, scatter_matrices(h, y));
}

/// Top generalized eigenvector of (S_W + λI)⁻¹S_B by power iteration on the
/// symmetric form L⁻¹S_BL⁻ᵀ, with L the Cholesky factor of S_W + λI.
inline FisherDiscriminant fisher_fit(const DenseMatrix& h, std::span<const int> y, double ridge = 1e-6) {
  if (h.rows() != y.size()) throw DimensionError("fisher_fit: one label per row required");
  std::map<int, std::size_t> counts;
  for (int c : y) ++counts[c];
  detail::require(counts.size() >= 2, "fisher_fit: at least two classes required");
  for (auto [c, n] : counts) detail::require(n >= 2, "fisher_fit: class " + std::to_string(c) + " has fewer than 2 samples");
  const std::size_t d = h.cols();
  Scatter s = scatter_matrices(h, y);
  DenseMatrix reg = s.within;
  for (std::size_t i = 0; i < d; ++i) reg(i, i) += ridge;
  const DenseMatrix l = linalg::cholesky(reg);
  auto apply = [&](const linalg::Vector& v) {
    // L⁻¹ S_B L⁻ᵀ v
    return linalg::forward_substitute(l, linalg::matvec(s.between, linalg::back_substitute_transposed(l, v)));
  };
  auto top = linalg::power_iteration(apply, linalg::start_vector(d, 1));
  linalg::Vector w = linalg::back_substitute_transposed(l, top.vector);
  linalg::normalize(w);
  if (linalg::norm(w) == 0.0) w.assign(d, 1.0 / std::sqrt(static_cast<double>(d)));
  // Deterministic sign: largest-magnitude coordinate positive.
  const auto big = std::max_element(w.begin(), w.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
  if (*big < 0.0)
    for (double& v : w) v = -v;
  return {std::move(w), std::move(s.between), std::move(s.within)};
}

struct SnrCurve {
  std::vector<std::size_t> steps;
  std::vector<double> snr;
  NoiseMode mode = NoiseMode::Directional;
};

struct SnrOptions {
  /// Refit w at every step instead of holding the clean-data discriminant.
  bool refit = false;
  std::size_t batch_size = 32;
};

/// Fisher SNR of probe embeddings along the forward process. Step 0 is the
/// clean data.
inline SnrCurve snr_curve(const ProbeExtractor& extractor, const Dataset& ds, const NoiseSchedule& sched, NoiseMode mode,
                          std::vector<std::size_t> steps, const RngStream& rng, const SnrOptions& opts = {}) {
  std::sort(steps.begin(), steps.end());
  steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
  const std::vector<int> y = task_labels(ds);
  const auto batches = make_ordered_batches(ds, opts.batch_size);
  std::vector<DenseMatrix> clean_parts;
  for (const auto& b : batches) clean_parts.push_back(b.features);
  const DenseMatrix x0 = vstack(clean_parts);
  const FisherDiscriminant fd = fisher_fit(probe_embed(extractor, ds, x0), y);

  SnrCurve curve;
  curve.mode = mode;
  curve.steps = steps;
  for (auto t : steps) {
    std::vector<DenseMatrix> parts;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      RngStream r = rng.split(t).split(bi);
      parts.push_back(diffuse_to_step(batches[bi].features, t, sched, mode, compute_batch_stats(batches[bi].features), r));
    }
    const DenseMatrix h = probe_embed(extractor, ds, vstack(parts));
    if (opts.refit)
      curve.snr.push_back(fisher_snr(fisher_fit(h, y).w, h, y));
    else
      curve.snr.push_back(fisher_snr(fd.w, h, y));
  }
  return curve;
}

/// Trapezoidal area under an SNR curve over its step axis.
inline double curve_area(const SnrCurve& c) {
  double a = 0.0;
  for (std::size_t i = 1; i < c.steps.size(); ++i)
    a += 0.5 * (c.snr[i] + c.snr[i - 1]) * static_cast<double>(c.steps[i] - c.steps[i - 1]);
  return a;
}

// ---------------------------------------------------------------------------
// SVD projection

struct ProjectionResult {
  DenseMatrix coords;                   // N×2
  std::vector<double> singular_values;  // leading values, descending
  DenseMatrix components;               // 2×d right singular vectors
};

/// Centers columns, finds right singular vectors by power iteration with
/// deflation and projects onto the top two. Up to `max_values` singular
/// values are reported.
inline ProjectionResult svd_project_2d(const DenseMatrix& x, std::size_t max_values = 32) {
  detail::require(x.rows() >= 2 && x.cols() >= 2, "svd_project_2d: need N >= 2 and d >= 2");
  const std::size_t n = x.rows(), d = x.cols();
  DenseMatrix c = x;
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += c(i, j);
    m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) c(i, j) -= m;
  }
  detail::require(frobenius_norm(c) > 0.0, "svd_project_2d: input has rank 0 after centering");

  std::function<linalg::Vector(const linalg::Vector&)> apply;
  DenseMatrix gram;
  if (d <= 512) {
    gram = matmul_tn(c, c);
    apply = [&](const linalg::Vector& v) { return linalg::matvec(gram, v); };
  } else {
    apply = [&](const linalg::Vector& v) {
      const linalg::Vector u = linalg::matvec(c, v);
      linalg::Vector out(d, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out[j] += c(i, j) * u[i];
      return out;
    };
  }
  const std::size_t k = std::max<std::size_t>(2, std::min({max_values, d, n}));
  std::vector<linalg::Vector> vecs;
  ProjectionResult res;
  for (std::size_t i = 0; i < k; ++i) {
    auto ep = linalg::power_iteration(apply, linalg::start_vector(d, 100 + i), vecs);
    vecs.push_back(ep.vector);
    res.singular_values.push_back(linalg::norm(linalg::matvec(c, ep.vector)));
  }
  res.components = DenseMatrix(2, d);
  for (std::size_t j = 0; j < d; ++j) {
    res.components(0, j) = vecs[0][j];
    res.components(1, j) = vecs[1][j];
  }
  res.coords = matmul_nt(c, res.components);
  return res;
}

// ---------------------------------------------------------------------------
// Two-ellipse simulation

struct EllipseSimConfig {
  std::size_t samples_per_class = 500;
  std::array<std::array<double, 2>, 2> centers{{{-2.0, 0.0}, {2.0, 0.0}}};
  /// Semi-axes (major, minor).
  std::array<double, 2> semi_axes{3.0, 1.0};
  /// Tilt of each class's major axis away from the vertical, degrees.
  std::array<double, 2> tilt_deg{30.0, -30.0};
  double boundary_noise = 0.1;
  std::size_t num_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::vector<std::size_t> checkpoints{0, 100, 500, 800, 1000};
  std::uint64_t seed = 0;
};

struct EllipseSnapshot {
  NoiseMode mode;
  std::size_t step;
  DenseMatrix points;
  double separability;
};

struct EllipseSimResult {
  DenseMatrix clean;
  std::vector<int> labels;
  std::vector<EllipseSnapshot> snapshots;

  double separability(NoiseMode m, std::size_t step) const {
    for (const auto& s : snapshots)
      if (s.mode == m && s.step == step) return s.separability;
    throw ContractError("EllipseSimResult: no snapshot for that mode and step");
  }
};

/// Points on two tilted ellipse boundaries with Gaussian jitter.
inline std::pair<DenseMatrix, std::vector<int>> sample_two_ellipses(const EllipseSimConfig& cfg, RngStream& rng) {
  detail::require(cfg.samples_per_class >= 2, "sample_two_ellipses: need at least 2 samples per class");
  const std::size_t n = cfg.samples_per_class;
  DenseMatrix pts(2 * n, 2);
  std::vector<int> labels(2 * n);
  for (std::size_t c = 0; c < 2; ++c) {
    const double tilt = cfg.tilt_deg[c] * std::numbers::pi / 180.0;
    // Major axis direction: vertical rotated by `tilt` (counter-clockwise positive).
    const double ux = -std::sin(tilt), uy = std::cos(tilt);
    const double vx = uy, vy = -ux;
    for (std::size_t i = 0; i < n; ++i) {
      const double th = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double a = cfg.semi_axes[0] * std::cos(th), b = cfg.semi_axes[1] * std::sin(th);
      const std::size_t r = c * n + i;
      pts(r, 0) = cfg.centers[c][0] + a * ux + b * vx + cfg.boundary_noise * rng.normal();
      pts(r, 1) = cfg.centers[c][1] + a * uy + b * vy + cfg.boundary_noise * rng.normal();
      labels[r] = static_cast<int>(c);
    }
  }
  return {pts, labels};
}

/// Diffuses the clouds to each checkpoint under every mode and scores how
/// well the clean-data linear classifier still separates them.
inline EllipseSimResult simulate_two_ellipses(const EllipseSimConfig& cfg, std::span<const NoiseMode> modes) {
  const RngStream root(cfg.seed);
  RngStream sample_rng = root.split(0);
  EllipseSimResult res;
  std::tie(res.clean, res.labels) = sample_two_ellipses(cfg, sample_rng);
  const NoiseSchedule sched = build_linear_schedule(cfg.num_steps, cfg.beta_start, cfg.beta_end);
  const BatchStats stats = compute_batch_stats(res.clean);
  LogRegOptions lr;
  lr.reg = 1e-4;
  const LinearModel clf = fit_logistic_regression(res.clean, res.labels, lr).model;
  for (const NoiseMode mode : modes) {
    for (auto t : cfg.checkpoints) {
      RngStream r = root.split(1).split(static_cast<std::uint64_t>(mode)).split(t);
      DenseMatrix xt = diffuse_to_step(res.clean, t, sched, mode, stats, r);
      const double sep = accuracy(clf.predict(xt), res.labels);
      res.snapshots.push_back({mode, t, std::move(xt), sep});
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Synthetic anisotropic data

struct AnisotropicGraphConfig {
  std::size_t nodes = 400;
  std::size_t feature_dim = 16;
  /// Coordinates whose sign depends on the class.
  std::size_t signal_dims = 4;
  double scale = 0.2;
  double p_in = 0.02;
  double p_out = 0.005;
  std::uint64_t seed = 0;
};

/// Two-class node dataset whose features have small, axis-concentrated
/// variance and class-dependent sign patterns.
inline Dataset make_anisotropic_node_dataset(const AnisotropicGraphConfig& cfg) {
  detail::require(cfg.nodes >= 4 && cfg.feature_dim >= 1 && cfg.signal_dims <= cfg.feature_dim,
                  "make_anisotropic_node_dataset: invalid config");
  RngStream rng = RngStream(cfg.seed).split(11);
  Dataset ds;
  ds.task = Task::Node;
  ds.num_classes = 2;
  Graph g;
  g.node_count = cfg.nodes;
  std::vector<int> labels(cfg.nodes);
  for (std::size_t i = 0; i < cfg.nodes; ++i) labels[i] = static_cast<int>(i % 2);
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t i = 0; i < cfg.nodes; ++i)
    for (std::size_t j = i + 1; j < cfg.nodes; ++j)
      if (rng.uniform() < (labels[i] == labels[j] ? cfg.p_in : cfg.p_out)) edges.emplace_back(i, j);
  g.adjacency = SparseAdjacency::from_undirected_edges(cfg.nodes, edges);
  g.features = DenseMatrix(cfg.nodes, cfg.feature_dim);
  for (std::size_t i = 0; i < cfg.nodes; ++i)
    for (std::size_t j = 0; j < cfg.feature_dim; ++j) {
      const double axis = cfg.scale * std::pow(0.7, static_cast<double>(j));
      const double magnitude = axis * (0.5 + std::abs(rng.normal()));
      double sign;
      if (j < cfg.signal_dims)
        sign = ((labels[i] == 0) == (j % 2 == 0)) ? 1.0 : -1.0;
      else
        sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      g.features(i, j) = sign * magnitude;
    }
  g.node_labels = labels;
  ds.graphs.push_back(std::move(g));
  ds.node_split.resize(cfg.nodes);
  for (std::size_t i = 0; i < cfg.nodes; ++i) {
    const std::size_t r = i % 10;
    ds.node_split[i] = r < 6 ? SplitRole::Train : r < 8 ? SplitRole::Val : SplitRole::Test;
  }
  return ds;
}

}  // namespace ddm
